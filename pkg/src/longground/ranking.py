"""Context pre-ranking, per-scale top-m selection and content re-ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorGrid
from .errors import UsageError
from .numerics import Tensor, ops

COS_EPS = 1e-8


@dataclass
class ScoreTable:
    """Scores for one query against one video's anchors.

    ``ctx`` covers every anchor (NaN for invalid ones); ``ctn`` and ``final``
    are aligned with ``subset`` (global anchor indices).
    """

    ctx: np.ndarray
    subset: np.ndarray
    ctn: np.ndarray | None = None
    labels: np.ndarray | None = None

    @property
    def ctx_subset(self) -> np.ndarray:
        return self.ctx[self.subset]

    @property
    def final(self) -> np.ndarray:
        if self.ctn is None:
            return self.ctx_subset
        return self.ctx_subset + self.ctn


def cosine(x: Tensor, q: Tensor) -> Tensor:
    """Cosine between rows of ``x`` (..., D) and rows of ``q`` (Q, D): (..., Q)."""
    if q.ndim == 1:
        q = ops.reshape(q, (1, q.shape[0]))
    qn = np.linalg.norm(q.data, axis=-1)
    if np.any(qn == 0):
        raise UsageError("query vector has zero norm")
    return ops.l2_normalize(x, axis=-1, eps=COS_EPS) @ ops.transpose(ops.l2_normalize(q, axis=-1, eps=COS_EPS))


def context_scores(e: Tensor, q: Tensor) -> Tensor:
    """``sigmoid(cos(e_i, q))`` for every anchor row. Shape ``(A,)`` for a single
    query vector, ``(Q, A)`` for a query matrix."""
    single = q.ndim == 1
    s = ops.sigmoid(ops.transpose(cosine(e, q)))
    return ops.reshape(s, (e.shape[0],)) if single else s


def rank_order(scores, starts, scales, valid=None) -> np.ndarray:
    """Indices sorted by score descending; ties by earlier start, smaller scale,
    lower index. Invalid entries are dropped."""
    scores = np.asarray(scores, dtype=float)
    idx = np.arange(len(scores))
    if valid is not None:
        idx = idx[np.asarray(valid, bool)]
    order = np.lexsort((idx, np.asarray(scales)[idx], np.asarray(starts)[idx], -scores[idx]))
    return idx[order]


def coarse_rank(scores, grid: AnchorGrid) -> np.ndarray:
    return rank_order(scores, grid.starts, grid.scale_of, grid.valid_mask)


def select_topm(scores, grid: AnchorGrid, m: int) -> np.ndarray:
    """The ``m`` best valid anchors of each scale, concatenated in scale order."""
    if m < 1:
        raise UsageError("m must be >= 1")
    scores = np.asarray(scores, dtype=float)
    valid = grid.valid_mask
    picks = []
    for l in range(1, grid.n_scales + 1):
        sl = grid.scale_slice(l)
        g = np.arange(sl.start, sl.stop)
        order = rank_order(scores[g], grid.starts[g], grid.scale_of[g], valid[g])
        picks.append(g[order[:m]])
    return np.concatenate(picks).astype(int)


def content_scores(vhat: Tensor, frame_valid: np.ndarray, q: Tensor) -> Tensor:
    """``sigmoid(mean_k cos(vhat_k, q))`` over each anchor's real frames.

    ``vhat`` is ``(B, C, D)``; returns ``(Q, B)`` for a query matrix or
    ``(B,)`` for one query vector.
    """
    single = q.ndim == 1
    b, c, _ = vhat.shape
    cos = cosine(vhat, q)                                   # (B, C, Q)
    nq = cos.shape[-1]
    fv = np.asarray(frame_valid, dtype=vhat.dtype)
    w = fv / fv.sum(axis=1, keepdims=True)
    weights = np.broadcast_to(w[:, :, None], (b, c, nq)).copy()
    mean_cos = ops.sum(ops.mul(cos, weights), axis=1)       # (B, Q)
    s = ops.sigmoid(ops.transpose(mean_cos))
    return ops.reshape(s, (b,)) if single else s


def rerank(ctx_subset, ctn, starts=None, scales=None):
    """Sum of context and content scores and the resulting order."""
    ctx_subset = np.asarray(ctx_subset, float)
    ctn = np.asarray(ctn, float)
    if ctx_subset.shape != ctn.shape:
        raise UsageError("context and content scores are not aligned")
    final = ctx_subset + ctn
    n = len(final)
    starts = np.zeros(n) if starts is None else starts
    scales = np.zeros(n) if scales is None else scales
    return final, rank_order(final, starts, scales)
