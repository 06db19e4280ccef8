"""Finite-difference checks for every layer and loss of the model.

Each case builds a small 64-bit problem from a seed and returns ``(f, params)``
for :func:`grad_check`. The ``gradcheck`` CLI command and the test-suite both
run :func:`run_suite`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import losses as L
from .anchors import partition_base
from .config import RunConfig
from .model import GroundingModel
from .numerics import Tensor, grad_check, ops
from .params import ParamStore, add_linear
from .ranking import content_scores, context_scores
from .regression import attentive_pool, init_regressor, predict_bias

DIM = 8
HEADS = 2


def _t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def _subset(store: ParamStore, prefix: str) -> dict:
    return {k: v for k, v in store.items() if k.startswith(prefix)}


def _scores_and_labels(rng, rows=3, cols=7):
    s = _t(rng.uniform(0.05, 0.95, (rows, cols)))
    y = rng.random((rows, cols)) * (rng.random((rows, cols)) > 0.4)
    y[:, 0] = np.maximum(y[:, 0], 0.3)           # every row has a positive
    mask = np.ones((rows, cols), bool)
    mask[-1, cols - 2:] = False
    return s, y, mask


# ------------------------------------------------------------------ layers

def case_partition(rng):
    x = _t(rng.normal(size=(23, DIM)))
    store = ParamStore()
    add_linear(store.scope("conv"), "x", 4 * DIM, DIM, rng, np.float64)
    fn = rng.normal(size=(6, DIM))
    return (lambda: ops.sum(ops.mul(partition_base(x, 4, store["conv.x.w"], store["conv.x.b"])[0], fn)),
            {"x": x, **store}, None)


def _swin(rng):
    cfg = enc.SwinConfig(dim=DIM, window_size=4, shift=2, n_heads=HEADS, mlp_ratio=2)
    store = ParamStore()
    for b in range(2):
        enc.init_swin_block(store.scope(f"blk{b}"), cfg, rng, np.float64)
    return cfg, store


def case_swin_block(rng):
    cfg, store = _swin(rng)
    x = _t(rng.normal(size=(11, DIM)))
    valid = np.ones(11, bool)
    valid[-2:] = False
    fn = rng.normal(size=(11, DIM))
    return (lambda: ops.sum(ops.mul(enc.swin_block(x, store.scope("blk0"), cfg, valid), fn)),
            {"x": x, **_subset(store, "blk0.")}, 10)


def case_multiscale(rng):
    cfg, store = _swin(rng)
    x = _t(rng.normal(size=(10, DIM)))
    blocks = [store.scope("blk0"), store.scope("blk1")]
    fns = [rng.normal(size=(10, DIM)), rng.normal(size=(5, DIM))]

    def f():
        feats, _ = enc.encode_multiscale(x, blocks, (1, 2), cfg)
        return ops.add(ops.sum(ops.mul(feats[0], fns[0])), ops.sum(ops.mul(feats[1], fns[1])))

    return f, {"x": x, **store}, 6


def case_context_scores(rng):
    e = _t(rng.normal(size=(9, DIM)))
    q = _t(rng.normal(size=(3, DIM)))
    fn = rng.normal(size=(3, 9))
    return lambda: ops.sum(ops.mul(context_scores(e, q), fn)), {"e": e, "q": q}, None


def case_intra_anchor(rng):
    store = ParamStore()
    enc.init_intra_anchor(store.scope("intra"), DIM, 8, rng, np.float64)
    v = _t(rng.normal(size=(3, 6, DIM)))
    fv = np.ones((3, 6), bool)
    fv[2, 4:] = False
    fn = rng.normal(size=(3, 6, DIM))
    return (lambda: ops.sum(ops.mul(enc.intra_anchor_msa(v, store.scope("intra"), HEADS, fv), fn)),
            {"v": v, **store}, 10)


def case_content_scores(rng):
    v = _t(rng.normal(size=(4, 5, DIM)))
    q = _t(rng.normal(size=(2, DIM)))
    fv = np.ones((4, 5), bool)
    fv[1, 3:] = False
    fn = rng.normal(size=(2, 4))
    return lambda: ops.sum(ops.mul(content_scores(v, fv, q), fn)), {"v": v, "q": q}, None


def case_regressor(rng):
    store = ParamStore()
    init_regressor(store.scope("reg"), DIM, 2 * DIM, rng, np.float64)
    p = store.scope("reg")
    v = _t(rng.normal(size=(3, 5, DIM)))
    e = _t(rng.normal(size=(3, DIM)))
    q = _t(rng.normal(size=(3, DIM)), grad=False)
    valid = np.ones((3, 5), bool)
    valid[1, 3:] = False
    fn = rng.normal(size=(3, 2))
    return (lambda: ops.sum(ops.mul(predict_bias(e, attentive_pool(v, p["att_w"], valid), q, p), fn)),
            {"v": v, "e": e, **store}, 12)


# ------------------------------------------------------------------ losses

def case_approx_rank(rng):
    s, _, mask = _scores_and_labels(rng)
    fn = rng.normal(size=s.shape)
    return lambda: ops.sum(ops.mul(L.approx_rank(s, 5.0, mask), fn)), {"s": s}, None


def _variant_case(variant, alpha=5.0):
    def case(rng):
        s, y, mask = _scores_and_labels(rng)
        return lambda: L.rank_objective(variant, s, y, alpha, mask), {"s": s}, None
    return case


def case_alignment(rng):
    ctx, y, _ = _scores_and_labels(rng, 3, 9)
    ctn, y2, mask = _scores_and_labels(rng, 3, 5)
    return (lambda: L.alignment_loss(ctx, y, ctn, y2, 5.0, 5.0, None, mask),
            {"ctx": ctx, "ctn": ctn}, None)


def _iou_inputs(rng, n=6):
    gs = rng.uniform(0, 10, n)
    ge = gs + rng.uniform(2, 5, n)
    ps = _t(gs + rng.uniform(-1, 1, n))
    pe = _t(ge + rng.uniform(-1, 1, n))
    return ps, pe, gs, ge


def case_iou(rng):
    ps, pe, gs, ge = _iou_inputs(rng)
    return lambda: L.iou_loss(ps, pe, gs, ge), {"ps": ps, "pe": pe}, None


def case_total(rng):
    ctx, y, mask = _scores_and_labels(rng)
    ps, pe, gs, ge = _iou_inputs(rng)

    def f():
        return L.total_loss(L.dual_rank_loss(ctx, y, 5.0, mask), L.iou_loss(ps, pe, gs, ge), L.MAD_WEIGHTS)

    return f, {"ctx": ctx, "ps": ps, "pe": pe}, None


def tiny_config(**kw) -> RunConfig:
    base = dict(c0=2, n_scales=2, pool_factors=(1, 2), window_size=4, shift=2, n_heads=HEADS, dim=DIM,
                m=3, alpha_ctx=5.0, alpha_ctn=5.0, precision="float64", batch_queries=3)
    base.update(kw)
    return RunConfig(**base)


def case_model(rng):
    cfg = tiny_config(seed=int(rng.integers(1 << 30)))
    model = GroundingModel.init(cfg)
    feats = rng.normal(size=(30, DIM))
    spans = np.array([[1.0, 6.0], [10.0, 18.0], [20.0, 29.0]])
    q = rng.normal(size=(3, DIM))
    return lambda: model.loss(feats, 1.0, q, spans)[0], dict(model.params), 3


LAYER_CASES = {
    "anchor_partition": case_partition,
    "swin_block": case_swin_block,
    "multiscale_encoder": case_multiscale,
    "context_scores": case_context_scores,
    "intra_anchor_msa": case_intra_anchor,
    "content_scores": case_content_scores,
    "boundary_regressor": case_regressor,
}

LOSS_CASES = {
    "approx_rank": case_approx_rank,
    "approx_ndcg": _variant_case("single"),
    "dual_rank": _variant_case("dual"),
    "bce": _variant_case("bce"),
    "nce": _variant_case("nce"),
    "alignment": case_alignment,
    "iou": case_iou,
    "total": case_total,
    "model_loss": case_model,
}

CASES = {**LAYER_CASES, **LOSS_CASES}


@dataclass
class SuiteResult:
    name: str
    seed: int
    max_error: float
    passed: bool
    seconds: float

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name} seed={self.seed} "
                f"max_rel_err={self.max_error:.2e} ({self.seconds:.2f}s)")


def run_case(name: str, seed: int, tol: float = 1e-4, step: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    f, params, max_entries = CASES[name](rng)
    t0 = time.perf_counter()
    rep = grad_check(f, params, step=step, tol=tol, max_entries=max_entries, seed=seed)
    return SuiteResult(name, seed, rep.max_error, rep.passed, time.perf_counter() - t0)


def run_suite(seeds=range(5), names=None, tol: float = 1e-4) -> list[SuiteResult]:
    names = list(CASES) if names is None else list(names)
    return [run_case(n, s, tol) for n in names for s in seeds]
