import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longground.errors import UsageError
from longground.numerics import Tensor, grad_check, ops
from longground.params import ParamStore
from longground.regression import (
    Prediction,
    adjust_bounds,
    adjust_bounds_array,
    attentive_pool,
    init_regressor,
    predict_bias,
    top_n,
)


def _regressor(dim=6, hidden=12, seed=0):
    store = ParamStore()
    init_regressor(store.scope("reg"), dim, hidden, np.random.default_rng(seed), np.float64)
    return store, store.scope("reg")


def test_attentive_pool_examples():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(4, 1)))
    one = rng.normal(size=(1, 1, 4))
    np.testing.assert_allclose(attentive_pool(Tensor(one), w).data, one[:, 0])
    same = np.tile(one, (1, 5, 1))
    np.testing.assert_allclose(attentive_pool(Tensor(same), w).data, one[:, 0], atol=1e-12)
    frames = rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(attentive_pool(Tensor(frames), Tensor(np.zeros((4, 1)))).data,
                               frames.mean(axis=1), atol=1e-12)


def test_attentive_pool_ignores_padding():
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(1, 4, 3))
    w = Tensor(np.zeros((3, 1)))
    got = attentive_pool(Tensor(frames), w, np.array([[True, True, False, False]])).data
    np.testing.assert_allclose(got, frames[:, :2].mean(axis=1), atol=1e-12)
    with pytest.raises(UsageError):
        attentive_pool(Tensor(frames), w, np.zeros((1, 4), bool))


def test_zero_head_predicts_zero():
    store, p = _regressor()
    for k in store:
        store[k].data[...] = 0.0
    x = Tensor(np.ones((3, 6)))
    np.testing.assert_array_equal(predict_bias(x, x, x, p).data, np.zeros((3, 2)))


def test_predict_bias_shape_and_errors():
    _, p = _regressor()
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(7, 6)))
    assert predict_bias(x, x, x, p).shape == (7, 2)
    with pytest.raises(UsageError):
        predict_bias(x, Tensor(np.ones((6, 6))), x, p)


@pytest.mark.parametrize("seed", range(3))
def test_fusion_gradient(seed):
    store, p = _regressor(seed=seed)
    rng = np.random.default_rng(seed)
    v = Tensor(rng.normal(size=(3, 5, 6)), requires_grad=True)
    e = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    q = Tensor(rng.normal(size=(3, 6)))
    valid = np.ones((3, 5), bool)
    valid[1, 3:] = False
    w = rng.normal(size=(3, 2))

    def f():
        return ops.sum(ops.mul(predict_bias(e, attentive_pool(v, p["att_w"], valid), q, p), w))

    rep = grad_check(f, {"v": v, "e": e, **store}, step=1e-6, tol=1e-4)
    assert rep.passed, str(rep)


def test_adjust_bounds_examples():
    assert adjust_bounds((10.0, 20.0), (0.0, 0.0), 100.0) == (10.0, 20.0)
    assert adjust_bounds((10.0, 20.0), (-0.1, 0.2), 100.0) == pytest.approx((9.0, 22.0))
    assert adjust_bounds((0.0, 10.0), (-0.5, 0.0), 100.0) == (0.0, 10.0)
    # collapse falls back to the anchor
    assert adjust_bounds((10.0, 20.0), (2.0, -2.0), 100.0) == (10.0, 20.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 90), st.floats(0.5, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_adjusted_interval_always_valid(ts, length, ds, de):
    s, e = adjust_bounds((ts, ts + length), (ds, de), 100.0)
    assert 0.0 <= s < e <= 100.0
    a_s, a_e = adjust_bounds_array([ts], [ts + length], [[ds, de]], 100.0)
    assert (a_s[0], a_e[0]) == (s, e)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 10), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0, 20))
def test_shift_equivariance(length, ds, de, shift):
    s0, e0 = adjust_bounds((30.0, 30.0 + length), (ds, de), 1000.0)
    s1, e1 = adjust_bounds((30.0 + shift, 30.0 + shift + length), (ds, de), 1000.0)
    assert s1 - s0 == pytest.approx(shift, abs=1e-9)
    assert e1 - e0 == pytest.approx(shift, abs=1e-9)


def test_top_n():
    preds = [Prediction(0, 10, 0.9, 0), Prediction(1, 11, 0.8, 1), Prediction(20, 30, 0.7, 2)]
    assert top_n(preds, 2) == preds[:2]
    assert top_n(preds, 10) == preds
    assert [p.anchor for p in top_n(preds, 2, use_nms=True)] == [0, 2]
    with pytest.raises(UsageError):
        top_n(preds, 0)
