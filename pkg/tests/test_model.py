import numpy as np
import pytest

from longground.anchors import AnchorGrid
from longground.errors import DimensionError
from longground.gradsuite import run_case, tiny_config
from longground.model import GroundingModel, max_anchor_len


def _inputs(seed=0, n=40, dim=8):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, dim)), rng.normal(size=(3, dim)), np.array([[1.0, 6.0], [10.0, 18.0], [20.0, 39.0]])


def test_encode_produces_one_row_per_anchor():
    model = GroundingModel.init(tiny_config())
    feats, _, _ = _inputs()
    enc = model.encode(feats, 1.0)
    assert enc.anchors.shape == (AnchorGrid(40, 1.0, 2, (1, 2)).size, 8)


def test_encode_rejects_wrong_dim():
    model = GroundingModel.init(tiny_config())
    with pytest.raises(DimensionError):
        model.encode(np.zeros((40, 5)), 1.0)


def test_max_anchor_len():
    assert max_anchor_len(tiny_config()) == 4
    assert max_anchor_len(tiny_config(c0=10, n_scales=4, pool_factors=(1, 2, 2, 2))) == 80


def test_init_is_seeded():
    a = GroundingModel.init(tiny_config(seed=3))
    b = GroundingModel.init(tiny_config(seed=3))
    c = GroundingModel.init(tiny_config(seed=4))
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert not all(np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_loss_parts_and_precision(precision):
    model = GroundingModel.init(tiny_config(precision=precision))
    feats, q, spans = _inputs()
    total, parts = model.loss(feats, 1.0, q, spans)
    assert total.data.dtype == np.dtype(precision)
    assert parts["total"] == pytest.approx(parts["align"] + 20.0 * parts["reg"], rel=1e-5)
    assert parts["align"] >= 0 and parts["reg"] >= 0          # reg is -ln IoU, unbounded above


@pytest.mark.parametrize("variant", ["dual", "single", "bce", "nce"])
def test_loss_variants_run(variant):
    model = GroundingModel.init(tiny_config(loss_variant=variant))
    feats, q, spans = _inputs()
    assert np.isfinite(model.loss(feats, 1.0, q, spans)[1]["total"])


@pytest.mark.parametrize("seed", range(2))
def test_end_to_end_loss_gradient(seed):
    r = run_case("model_loss", seed)
    assert r.passed, r.line()


@pytest.mark.parametrize("rr", [True, False])
@pytest.mark.parametrize("br", [True, False])
def test_prediction_toggles(rr, br):
    model = GroundingModel.init(tiny_config())
    feats, q, _ = _inputs()
    preds = model.predict(feats, 1.0, q, n=5, rr=rr, br=br)
    assert len(preds) == 3
    for row in preds:
        assert 1 <= len(row) <= 5
        assert all(0 <= p.t_s < p.t_e <= 40.0 for p in row)
        scores = [p.score for p in row]
        assert scores == sorted(scores, reverse=True)


def test_without_br_predictions_are_anchors():
    model = GroundingModel.init(tiny_config())
    feats, q, _ = _inputs()
    enc = model.encode(feats, 1.0)
    for row in model.predict_encoded(enc, q, rr=True, br=False, keep=5):
        for p in row:
            assert (p.t_s, p.t_e) == (enc.grid.starts[p.anchor], enc.grid.ends[p.anchor])


def test_pr_only_ranks_by_context_score():
    model = GroundingModel.init(tiny_config())
    feats, q, _ = _inputs()
    enc = model.encode(feats, 1.0)
    top = model.predict_encoded(enc, q[:1], rr=False, br=False, keep=1)[0][0]
    from longground.ranking import context_scores
    from longground.numerics import Tensor
    ctx = context_scores(enc.anchors, Tensor(q[:1])).data[0]
    assert top.score == pytest.approx(ctx[enc.grid.valid_mask].max())


def test_prediction_is_per_query_independent():
    model = GroundingModel.init(tiny_config())
    feats, q, _ = _inputs()
    batch = model.predict(feats, 1.0, q, n=5)
    for k in range(3):
        single = model.predict(feats, 1.0, q[k:k + 1], n=5)[0]
        assert [(p.t_s, p.t_e, p.anchor) for p in single] == [(p.t_s, p.t_e, p.anchor) for p in batch[k]]
        np.testing.assert_allclose([p.score for p in single], [p.score for p in batch[k]], rtol=1e-12)
