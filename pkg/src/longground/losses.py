"""Training objectives: approximate-rank NDCG in dual form, IoU regression and
the baseline BCE / NCE variants used for loss ablations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, UsageError
from .numerics import Tensor, ops
from .numerics.ops import _wrap

IOU_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    align: float = 1.0
    reg: float = 20.0

    def __post_init__(self):
        if self.align < 0 or self.reg < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.align == 0 and self.reg == 0:
            raise ParameterError("loss weights cannot both be zero")


MAD_WEIGHTS = LossWeights(1.0, 20.0)
EGO4D_WEIGHTS = LossWeights(1.0, 5.0)


def approx_rank(scores: Tensor, alpha: float, mask: np.ndarray | None = None) -> Tensor:
    """Smoothed rank ``1 + sum_{u != i} sigmoid(-alpha (S_i - S_u))`` along the
    last axis. Entries outside ``mask`` neither receive nor contribute rank."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    s = scores.data
    if not np.isfinite(s).all():
        raise NumericError("approx_rank: non-finite scores")
    if mask is not None:
        mask = np.asarray(mask, bool)
        if mask.shape != scores.shape:
            raise UsageError(f"mask shape {mask.shape} != scores shape {scores.shape}")
    # sigmoid(-a d) = (1 + tanh(-a d / 2)) / 2, so with t_iu = tanh(-a (S_i - S_u) / 2)
    # the rank is 1 + (K_i - 1) / 2 + sum_u t_iu / 2 over valid u (t_ii = 0)
    x = np.ascontiguousarray(s) * (-0.5 * alpha)    # layout of t follows x
    t = x[..., :, None] - x[..., None, :]
    np.tanh(t, out=t)
    if mask is None:
        k = s.shape[-1]
        out = 1.0 + 0.5 * (k - 1) + 0.5 * t.sum(axis=-1)
    else:
        m = mask.astype(s.dtype)
        t *= m[..., None, :]
        out = 1.0 + 0.5 * (m.sum(axis=-1, keepdims=True) - 1) + 0.5 * t.sum(axis=-1)
        out = np.where(mask, out, 1.0)

    def bw(g):
        # d sigmoid / d S = a p (1 - p) = a (1 - t^2) / 4, symmetric in (i, u)
        w = t * t
        np.subtract(1.0, w, out=w)
        if mask is not None:
            g = g * m
            w *= m[..., None, :]
        w *= 0.25 * alpha
        # d rank_i / d S_i = -sum_u w_iu ; d rank_i / d S_u = +w_iu
        gs = (g[..., None, :] @ w)[..., 0, :] - g * w.sum(axis=-1)
        return (gs,)

    return _wrap(out.astype(s.dtype, copy=False), (scores,), bw)


def ideal_dcg(labels: np.ndarray, mask: np.ndarray | None = None, log=np.log) -> np.ndarray:
    """DCG of the best ordering, per row (last axis)."""
    y = np.where(mask, labels, 0.0) if mask is not None else labels
    ys = -np.sort(-y, axis=-1)
    disc = log(1.0 + np.arange(1, y.shape[-1] + 1))
    return ((2.0 ** ys - 1.0) / disc).sum(axis=-1)


def approx_ndcg_rows(scores: Tensor, labels, alpha: float, mask: np.ndarray | None = None) -> Tensor:
    """Per-row ``1 - DCG(approx ranks) / ideal DCG``; rows with no positive
    label give 0."""
    labels = np.asarray(labels, dtype=scores.dtype)
    if labels.shape != scores.shape:
        raise UsageError(f"labels {labels.shape} and scores {scores.shape} disagree")
    ranks = approx_rank(scores, alpha, mask)
    gains = 2.0 ** labels - 1.0
    if mask is not None:
        gains = np.where(mask, gains, 0.0)
    z = ideal_dcg(labels, mask)
    has_pos = z > 0
    inv_z = np.where(has_pos, 1.0 / np.where(has_pos, z, 1.0), 0.0).astype(scores.dtype)
    dcg = ops.sum(ops.div(gains.astype(scores.dtype), ops.log(ops.add(ranks, 1.0))), axis=-1)
    ndcg = ops.mul(dcg, inv_z)
    return ops.sub(has_pos.astype(scores.dtype), ndcg)


def approx_ndcg_loss(scores: Tensor, labels, alpha: float, mask: np.ndarray | None = None) -> Tensor:
    """Scalar loss for one list of ``K`` candidates."""
    if scores.ndim != 1:
        raise UsageError("approx_ndcg_loss expects one list; use approx_ndcg_rows for batches")
    return ops.reshape(approx_ndcg_rows(scores, labels, alpha, mask), ())


def _row_mean(per_row: Tensor) -> Tensor:
    return ops.mean(per_row)


def dual_rank_loss(scores: Tensor, labels, alpha: float, mask: np.ndarray | None = None,
                   query_axis: bool = True) -> Tensor:
    """Mean anchor-rank loss over queries (rows) plus mean query-rank loss over
    anchors (columns) of a ``Q x A`` score matrix."""
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != scores.shape:
        raise UsageError(f"need matching Q x A matrices, got {scores.shape} and {labels.shape}")
    loss = _row_mean(approx_ndcg_rows(scores, labels, alpha, mask))
    if query_axis:
        mt = None if mask is None else np.asarray(mask).T
        cols = approx_ndcg_rows(ops.transpose(scores), labels.T, alpha, mt)
        loss = ops.add(loss, _row_mean(cols))
    return loss


def single_rank_loss(scores: Tensor, labels, alpha: float, mask: np.ndarray | None = None) -> Tensor:
    return dual_rank_loss(scores, labels, alpha, mask, query_axis=False)


def bce_loss(scores: Tensor, labels, mask: np.ndarray | None = None, eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy of sigmoid-range scores against IoU labels."""
    y = np.asarray(labels, dtype=scores.dtype)
    s = ops.minimum(ops.maximum(scores, eps), 1.0 - eps)
    ll = ops.add(ops.mul(ops.log(s), y), ops.mul(ops.log(ops.sub(1.0, s)), 1.0 - y))
    if mask is None:
        return ops.neg(ops.mean(ll))
    m = np.asarray(mask, dtype=scores.dtype)
    return ops.scale(ops.sum(ops.mul(ll, m)), -1.0 / max(m.sum(), 1.0))


def nce_loss(scores: Tensor, labels, mask: np.ndarray | None = None, temperature: float = 0.1) -> Tensor:
    """Per row, cross-entropy of the highest-IoU candidate against the rest."""
    y = np.asarray(labels, dtype=float)
    if mask is not None:
        y = np.where(mask, y, -1.0)
    has_pos = y.max(axis=-1) > 0
    if not has_pos.any():
        return ops.scale(ops.sum(scores), 0.0)
    logits = ops.scale(scores, 1.0 / temperature)
    if mask is not None:
        # excluded entries get a large negative logit (constant offset, no grad)
        logits = ops.add(logits, np.where(mask, 0.0, -1e4).astype(scores.dtype))
    logp = ops.log_softmax(logits, axis=-1)
    pos = np.argmax(y, axis=-1)
    pick = np.zeros(scores.shape, dtype=scores.dtype)
    pick[np.arange(len(pos)), pos] = has_pos
    return ops.scale(ops.sum(ops.mul(logp, pick)), -1.0 / has_pos.sum())


RANK_VARIANTS = ("dual", "single", "bce", "nce")


def rank_objective(variant: str, scores: Tensor, labels, alpha: float, mask=None) -> Tensor:
    if variant == "dual":
        return dual_rank_loss(scores, labels, alpha, mask)
    if variant == "single":
        return single_rank_loss(scores, labels, alpha, mask)
    if variant == "bce":
        return bce_loss(scores, labels, mask)
    if variant == "nce":
        return nce_loss(scores, labels, mask)
    raise ParameterError(f"unknown loss variant {variant!r}; expected one of {RANK_VARIANTS}")


def alignment_loss(ctx: Tensor, ctx_labels, ctn: Tensor | None, ctn_labels, alpha_ctx: float = 0.01,
                   alpha_ctn: float = 0.01, ctx_mask=None, ctn_mask=None, variant: str = "dual") -> Tensor:
    """Context term over all anchors plus content term over the re-ranked subset."""
    loss = rank_objective(variant, ctx, ctx_labels, alpha_ctx, ctx_mask)
    if ctn is not None and ctn.size and (ctn_mask is None or np.any(ctn_mask)):
        loss = ops.add(loss, rank_objective(variant, ctn, ctn_labels, alpha_ctn, ctn_mask))
    return loss


def interval_iou(pred_s: Tensor, pred_e: Tensor, gt_s, gt_e) -> Tensor:
    """Differentiable IoU of predicted intervals against fixed ground truth.

    Uses the hull as denominator, which equals the union whenever the
    intervals overlap; inverted predictions get zero intersection.
    """
    gt_s = np.asarray(gt_s, dtype=pred_s.dtype)
    gt_e = np.asarray(gt_e, dtype=pred_s.dtype)
    inter = ops.relu(ops.sub(ops.minimum(pred_e, gt_e), ops.maximum(pred_s, gt_s)))
    hull = ops.sub(ops.maximum(pred_e, gt_e), ops.minimum(pred_s, gt_s))
    return ops.div(inter, hull)


def iou_loss(pred_s: Tensor, pred_e: Tensor, gt_s, gt_e, contributing=None) -> Tensor:
    """Mean ``-ln(max(IoU, 1e-6))`` over contributing predictions (0 if none)."""
    if contributing is not None:
        keep = np.flatnonzero(np.asarray(contributing, bool))
        if keep.size == 0:
            return Tensor(np.zeros((), dtype=pred_s.dtype))
        pred_s, pred_e = ops.take(pred_s, keep), ops.take(pred_e, keep)
        gt_s, gt_e = np.asarray(gt_s)[keep], np.asarray(gt_e)[keep]
    if pred_s.size == 0:
        return Tensor(np.zeros((), dtype=pred_s.dtype))
    iou = ops.maximum(interval_iou(pred_s, pred_e, gt_s, gt_e), IOU_FLOOR)
    return ops.neg(ops.mean(ops.log(iou)))


def total_loss(align: Tensor, reg: Tensor, weights: LossWeights = MAD_WEIGHTS) -> Tensor:
    terms = []
    if weights.align:
        terms.append(ops.scale(align, weights.align))
    if weights.reg:
        terms.append(ops.scale(reg, weights.reg))
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


# ------------------------------------------------------------- exact oracles

def exact_ranks(scores) -> np.ndarray:
    """1-based ranks by descending score (ties by position)."""
    scores = np.asarray(scores, float)
    order = np.lexsort((np.arange(scores.shape[-1]), -scores))
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def exact_ndcg(scores, labels, log=np.log) -> float:
    labels = np.asarray(labels, float)
    z = ideal_dcg(labels, log=log)
    if z <= 0:
        return 1.0
    dcg = ((2.0 ** labels - 1.0) / log(1.0 + exact_ranks(scores))).sum()
    return float(dcg / z)
