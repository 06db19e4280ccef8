import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longground.errors import UsageError
from longground.metrics import key, nms_1d, nms_reference, recall_at, recall_reference
from longground.regression import Prediction


def _random_case(rng, n_q=None):
    n_q = n_q or int(rng.integers(1, 8))
    preds, gts = [], []
    for _ in range(n_q):
        k = int(rng.integers(0, 8))
        s = np.round(rng.uniform(0, 20, k), 1)
        e = s + np.round(rng.uniform(0.1, 10, k), 1)
        preds.append([(a, b, 1.0) for a, b in zip(s, e)])
        gs = float(np.round(rng.uniform(0, 20), 1))
        gts.append((gs, gs + float(np.round(rng.uniform(0.5, 10), 1))))
    return preds, gts


def test_recall_examples():
    gt = [(10.0, 20.0)]
    assert recall_at([[(10.0, 20.0)]], gt)[(1, 0.5)] == 1.0
    disjoint = recall_at([[(0.0, 5.0), (30.0, 40.0)]], gt)
    assert all(v == 0.0 for v in disjoint.recall.values())
    assert recall_at([[]], gt)[(5, 0.1)] == 0.0


def test_boundary_iou_is_a_miss():
    # IoU of (0, 5) against (0, 10) is exactly 0.5
    res = recall_at([[(0.0, 5.0)]], [(0.0, 10.0)])
    assert res[(1, 0.3)] == 1.0
    assert res[(1, 0.5)] == 0.0
    assert recall_reference([[(0.0, 5.0)]], [(0.0, 10.0)], 1, 0.5) == 0.0


def test_recall_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        preds, gts = _random_case(rng)
        res = recall_at(preds, gts)
        for n in (1, 5):
            for m in (0.1, 0.3, 0.5):
                assert res[(n, m)] == recall_reference(preds, gts, n, m)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_recall_monotone(seed):
    preds, gts = _random_case(np.random.default_rng(seed))
    res = recall_at(preds, gts, n_list=(1, 3, 5), m_list=(0.1, 0.3, 0.5, 0.7))
    for m in (0.1, 0.3, 0.5, 0.7):
        assert res[(1, m)] <= res[(3, m)] <= res[(5, m)]
    for n in (1, 3, 5):
        assert res[(n, 0.1)] >= res[(n, 0.3)] >= res[(n, 0.5)] >= res[(n, 0.7)]


def test_report_keys_and_json():
    res = recall_at([[Prediction(0.0, 1.0, 0.9)]], [(0.0, 1.0)])
    assert key(1, 0.5) == "R@1-0.5"
    assert res.as_dict()["R@5-0.1"] == 1.0
    assert res.to_json().startswith('{"R@1-0.1": 1.0')
    with pytest.raises(UsageError):
        recall_at([[]], [])


def test_nms_examples():
    assert len(nms_1d([(0, 10, 0.9), (0, 10, 0.8)])) == 1
    disjoint = [(0, 1, 0.2), (2, 3, 0.9), (4, 5, 0.5)]
    assert [p[2] for p in nms_1d(disjoint)] == [0.9, 0.5, 0.2]
    ties = [(0, 10, 0.5, "a"), (1, 11, 0.5, "b")]
    assert nms_1d(ties)[0][3] == "a"
    with pytest.raises(UsageError):
        nms_1d(disjoint, 1.5)


def test_nms_matches_reference():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(0, 25))
        s = np.round(rng.uniform(0, 50, k), 0)
        e = s + np.round(rng.uniform(1, 15, k), 0)
        sc = np.round(rng.random(k), 1)
        preds = [Prediction(float(a), float(b), float(c), i) for i, (a, b, c) in enumerate(zip(s, e, sc))]
        thr = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0]))
        assert nms_1d(preds, thr) == nms_reference(preds, thr)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_nms_output_is_pairwise_separated(seed, thr):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 30, 15)
    preds = [Prediction(a, a + w, c) for a, w, c in zip(s, rng.uniform(0.5, 8, 15), rng.random(15))]
    kept = nms_1d(preds, thr)
    assert set(kept) <= set(preds)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            inter = max(0.0, min(a.t_e, b.t_e) - max(a.t_s, b.t_s))
            union = (a.t_e - a.t_s) + (b.t_e - b.t_s) - inter
            assert inter / union <= thr
