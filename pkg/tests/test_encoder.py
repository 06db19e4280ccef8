import numpy as np
import pytest

from longground import encoder as enc
from longground.errors import ParameterError
from longground.numerics import Tensor, grad_check, ops
from longground.params import ParamStore


def _store(dim=16, dtype=np.float64, seed=0, out_gain=1.0, max_len=32):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    cfg = enc.SwinConfig(dim=dim, window_size=4, shift=2, n_heads=4)
    enc.init_attention(store.scope("att"), dim, rng, dtype, out_gain)
    enc.init_swin_block(store.scope("blk"), cfg, rng, dtype, out_gain)
    enc.init_intra_anchor(store.scope("intra"), dim, max_len, rng, dtype, out_gain)
    for b in range(2):
        enc.init_swin_block(store.scope(f"ms{b}"), cfg, rng, dtype, out_gain)
    return store, cfg


def _contract(out, seed):
    return ops.sum(ops.mul(out, Tensor(np.random.default_rng(seed).normal(size=out.shape))))


@pytest.mark.parametrize("s", [1, 3, 8, 17, 64])
def test_single_window_equals_dense_attention(s):
    store, _ = _store(dtype=np.float32)
    x = Tensor(np.random.default_rng(s).normal(size=(s, 16)).astype(np.float32))
    p = store.scope("att")
    for window in (s, s + 5):
        w = enc.window_msa(x, p, window, 0, 4)
        d = enc.dense_msa(x, p, 4)
        assert np.max(np.abs(w.data - d.data)) <= 1e-6


def test_cyclic_shift_round_trip():
    d = 16
    store = ParamStore()
    sc = store.scope("att")
    eye = np.eye(d)
    sc.add("qkv.w", np.concatenate([10 * eye, 10 * eye, eye], axis=1))
    sc.add("qkv.b", np.zeros(3 * d))
    sc.add("proj.w", eye)
    sc.add("proj.b", np.zeros(d))
    x = Tensor(np.eye(d))
    for shift in (0, 2):
        out = enc.window_msa(x, sc, 4, shift, 1)
        np.testing.assert_allclose(out.data, x.data, atol=1e-6)
    sp, order, _ = enc.window_masks(13, 4, 2)
    assert np.array_equal(order[np.argsort(order)], np.arange(sp))


def test_window_masks_block_wraparound():
    _, order, mask = enc.window_masks(16, 8, 4)
    last = order[8:]
    assert last.tolist() == [12, 13, 14, 15, 0, 1, 2, 3]
    assert mask[1, 0, :4].all() and not mask[1, 0, 4:].any()
    assert mask[1, 5, 4:].all() and not mask[1, 5, :4].any()


def test_window_flops_are_linear():
    for s in (64, 256, 1024):
        ratio = enc.window_msa_flops(2 * s, 64, 8) / enc.window_msa_flops(s, 64, 8)
        assert abs(ratio - 2.0) <= 0.1


def test_heads_must_divide_dim():
    store, _ = _store()
    with pytest.raises(ParameterError):
        enc.window_msa(Tensor(np.ones((4, 16))), store.scope("att"), 4, 0, 3)
    with pytest.raises(ParameterError):
        enc.SwinConfig(dim=10, n_heads=4)
    with pytest.raises(ParameterError):
        enc.SwinConfig(dim=8, window_size=4, shift=4, n_heads=2)


def test_zero_output_weights_make_block_identity():
    store, cfg = _store(out_gain=0.0)
    x = Tensor(np.random.default_rng(1).normal(size=(11, 16)))
    out = enc.swin_block(x, store.scope("blk"), cfg)
    np.testing.assert_array_equal(out.data, x.data)


@pytest.mark.parametrize("s", [1, 7, 64])
def test_block_preserves_shape(s):
    store, cfg = _store()
    out = enc.swin_block(Tensor(np.zeros((s, 16)) + 0.1), store.scope("blk"), cfg)
    assert out.shape == (s, 16)


def test_block_gradient():
    store, cfg = _store(seed=3)
    x = Tensor(np.random.default_rng(4).normal(size=(9, 16)), requires_grad=True)
    p = store.scope("blk")
    params = {"x": x, **{k: v for k, v in store.items() if k.startswith("blk.")}}
    rep = grad_check(lambda: _contract(enc.swin_block(x, p, cfg), 5), params, step=1e-6, tol=1e-4,
                     max_entries=12)
    assert rep.passed, str(rep)


def test_masked_padding_does_not_leak():
    store, cfg = _store(seed=6)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(13, 16))
    base = enc.swin_block(Tensor(x), store.scope("blk"), cfg).data
    padded = np.concatenate([x, np.zeros((6, 16))])
    valid = np.arange(19) < 13
    out = enc.swin_block(Tensor(padded), store.scope("blk"), cfg, valid).data
    assert np.max(np.abs(out[:13] - base)) <= 1e-6


def test_multiscale_lengths():
    store, cfg = _store()
    blocks = [store.scope("ms0"), store.scope("ms1"), store.scope("ms0"), store.scope("ms1")]
    e0 = Tensor(np.random.default_rng(0).normal(size=(80, 16)))
    feats, masks = enc.encode_multiscale(e0, blocks, [1, 2, 2, 2], cfg)
    assert [f.shape[0] for f in feats] == [80, 40, 20, 10]
    assert sum(f.shape[0] for f in feats) == 150
    assert all(m.all() for m in masks)
    feats, _ = enc.encode_multiscale(e0, blocks, [1, 1, 1, 1], cfg)
    assert [f.shape[0] for f in feats] == [80] * 4


def test_pooling_tail_and_mean():
    x = Tensor(np.arange(10.0).reshape(5, 2))
    mx, ok = enc.temporal_pool(x, 2, np.ones(5, bool), "max")
    np.testing.assert_array_equal(mx.data, [[2, 3], [6, 7], [8, 9]])
    assert ok.all()
    mn, _ = enc.temporal_pool(x, 2, np.ones(5, bool), "mean")
    np.testing.assert_allclose(mn.data, [[1, 2], [5, 6], [8, 9]])


def test_multiscale_flops_linear_in_n():
    cfg = enc.SwinConfig(dim=64)
    ns = np.array([1000, 2000, 4000, 8000])
    f = np.array([enc.encode_multiscale_flops(n, [1, 2, 2, 2], cfg) for n in ns])
    slope = np.polyfit(ns, f, 1)
    resid = f - np.polyval(slope, ns)
    assert np.max(np.abs(resid)) / f.max() < 1e-3


def test_intra_anchor_identity_with_zero_projection():
    store, _ = _store(out_gain=0.0)
    v = Tensor(np.random.default_rng(8).normal(size=(10, 16)))
    out = enc.intra_anchor_msa(v, store.scope("intra"), 4)
    np.testing.assert_array_equal(out.data, v.data)


def test_intra_anchor_not_permutation_equivariant():
    store, _ = _store(seed=9)
    p = store.scope("intra")
    p["pos"].data[:] = np.random.default_rng(1).normal(size=p["pos"].shape)
    rng = np.random.default_rng(10)
    v = rng.normal(size=(10, 16))
    perm = rng.permutation(10)
    out = enc.intra_anchor_msa(Tensor(v), p, 4).data
    out_perm = enc.intra_anchor_msa(Tensor(v[perm]), p, 4).data
    assert not np.allclose(out[perm], out_perm)


def test_intra_anchor_length_limit():
    store, _ = _store(max_len=8)
    with pytest.raises(ParameterError):
        enc.intra_anchor_msa(Tensor(np.ones((9, 16))), store.scope("intra"), 4)


def test_intra_anchor_gradient_batched_with_padding():
    store, _ = _store(seed=11)
    p = store.scope("intra")
    v = Tensor(np.random.default_rng(12).normal(size=(3, 6, 16)), requires_grad=True)
    fv = np.ones((3, 6), bool)
    fv[2, 4:] = False
    params = {"v": v, **{k: t for k, t in store.items() if k.startswith("intra.")}}
    rep = grad_check(lambda: _contract(enc.intra_anchor_msa(v, p, 4, fv), 13), params,
                     step=1e-6, tol=1e-4, max_entries=12)
    assert rep.passed, str(rep)


def test_intra_anchor_padding_does_not_leak():
    store, _ = _store(seed=14)
    p = store.scope("intra")
    rng = np.random.default_rng(15)
    v = rng.normal(size=(5, 16))
    base = enc.intra_anchor_msa(Tensor(v), p, 4).data
    padded = np.concatenate([v, np.zeros((3, 16))])[None]
    fv = (np.arange(8) < 5)[None]
    out = enc.intra_anchor_msa(Tensor(padded), p, 4, fv).data[0]
    assert np.max(np.abs(out[:5] - base)) <= 1e-9
