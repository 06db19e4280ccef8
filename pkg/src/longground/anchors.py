"""Temporal anchor geometry: base partition, multi-scale lengths, bounds, IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UsageError
from .numerics import Tensor, ops


@dataclass(frozen=True)
class Anchor:
    scale: int          # 1-based
    index: int
    t_s: float
    t_e: float
    frame_lo: int
    frame_hi: int       # exclusive, clamped to the real frame count


def anchor_lengths(c0: int, n_scales: int, pool_factors) -> list[int]:
    """``C_l = C_{l-1} * r_l`` for l = 1..L."""
    pool_factors = list(pool_factors)
    if c0 < 1:
        raise ParameterError(f"base anchor length must be >= 1, got {c0}")
    if len(pool_factors) != n_scales:
        raise ParameterError(f"need {n_scales} pool factors, got {len(pool_factors)}")
    lengths, c = [], int(c0)
    for r in pool_factors:
        if int(r) != r or r < 1:
            raise ParameterError(f"pool factors must be integers >= 1, got {r}")
        c *= int(r)
        lengths.append(c)
    return lengths


class AnchorGrid:
    """All anchors of one video, scales concatenated in order 1..L.

    Anchors of scale ``l`` tile ``[0, N)`` in chunks of ``C_l`` frames; the last
    chunk may be short, in which case its frames past ``N`` are padding.
    """

    def __init__(self, n_frames: int, fps: float, c0: int, pool_factors):
        if n_frames < 1:
            raise UsageError("video has no frames")
        if fps <= 0:
            raise ParameterError("fps must be positive")
        self.n_frames = int(n_frames)
        self.fps = float(fps)
        self.c0 = int(c0)
        self.pool_factors = [int(r) for r in pool_factors]
        self.lengths = anchor_lengths(c0, len(self.pool_factors), self.pool_factors)
        self.counts = [math.ceil(n_frames / c) for c in self.lengths]
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)]).astype(int)
        self.valid = [np.ones(n, dtype=bool) for n in self.counts]

        scale, index, lo, hi, length = [], [], [], [], []
        for l, (c, n) in enumerate(zip(self.lengths, self.counts), start=1):
            i = np.arange(n)
            scale.append(np.full(n, l))
            index.append(i)
            lo.append(i * c)
            hi.append(np.minimum((i + 1) * c, n_frames))
            length.append(np.full(n, c))
        self.scale_of = np.concatenate(scale)
        self.index_in_scale = np.concatenate(index)
        self.frame_lo = np.concatenate(lo)
        self.frame_hi = np.concatenate(hi)
        self.anchor_len = np.concatenate(length)
        self.starts = self.frame_lo / self.fps
        self.ends = self.frame_hi / self.fps

    @property
    def n_scales(self) -> int:
        return len(self.lengths)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    @property
    def valid_mask(self) -> np.ndarray:
        return np.concatenate(self.valid)

    def global_index(self, scale: int, index: int) -> int:
        self._check(scale, index)
        return int(self.offsets[scale - 1] + index)

    def scale_slice(self, scale: int) -> slice:
        return slice(int(self.offsets[scale - 1]), int(self.offsets[scale]))

    def anchor(self, g: int) -> Anchor:
        return Anchor(int(self.scale_of[g]), int(self.index_in_scale[g]), float(self.starts[g]),
                      float(self.ends[g]), int(self.frame_lo[g]), int(self.frame_hi[g]))

    def anchors(self, scale: int | None = None) -> list[Anchor]:
        rng = range(self.size) if scale is None else range(*self.scale_slice(scale).indices(self.size))
        return [self.anchor(g) for g in rng]

    def bounds(self, scale: int, index: int) -> tuple[float, float]:
        g = self.global_index(scale, index)
        return float(self.starts[g]), float(self.ends[g])

    def _check(self, scale: int, index: int) -> None:
        if not 1 <= scale <= self.n_scales:
            raise UsageError(f"scale {scale} outside 1..{self.n_scales}")
        if not 0 <= index < self.counts[scale - 1]:
            raise UsageError(f"anchor index {index} outside scale {scale} (count {self.counts[scale - 1]})")


def anchor_bounds(grid: AnchorGrid, scale: int, index: int, fps: float | None = None) -> tuple[float, float]:
    """``(i*C_l/fps, min((i+1)*C_l, N)/fps)``."""
    grid._check(scale, index)
    fps = grid.fps if fps is None else float(fps)
    c = grid.lengths[scale - 1]
    return index * c / fps, min((index + 1) * c, grid.n_frames) / fps


def partition_base(features: Tensor, c0: int, weight: Tensor, bias: Tensor | None = None):
    """Non-overlapping Conv1d (kernel = stride = ``c0``) over frames.

    ``weight`` has shape ``(c0 * D, D_out)`` acting on each chunk flattened
    frame-major. Returns ``(E0, mask)`` where ``mask`` marks chunks holding at
    least one real frame; the sequence is right-padded with zero frames.
    """
    if c0 < 1:
        raise ParameterError(f"c0 must be >= 1, got {c0}")
    n, d = features.shape
    if n == 0:
        raise UsageError("video has no frames")
    if weight.shape[0] != c0 * d:
        raise ParameterError(f"conv weight needs {c0 * d} input rows, got {weight.shape[0]}")
    n_base = math.ceil(n / c0)
    padded = ops.pad(features, 0, n_base * c0 - n, axis=0)
    e0 = ops.linear(ops.reshape(padded, (n_base, c0 * d)), weight, bias)
    return e0, np.ones(n_base, dtype=bool)


def temporal_iou(a, b) -> float:
    """Intersection over union of two ``(start, end)`` intervals."""
    (s1, e1), (s2, e2) = a, b
    if s1 >= e1 or s2 >= e2:
        raise UsageError(f"degenerate interval in IoU: {a} vs {b}")
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    return inter / (max(e1, e2) - min(s1, s2)) if inter > 0 else 0.0


def iou_matrix(starts, ends, gt_starts, gt_ends) -> np.ndarray:
    """IoU between every ground-truth span (rows) and every anchor (columns)."""
    starts, ends = np.asarray(starts, float), np.asarray(ends, float)
    gs, ge = np.asarray(gt_starts, float)[:, None], np.asarray(gt_ends, float)[:, None]
    inter = np.clip(np.minimum(ends, ge) - np.maximum(starts, gs), 0.0, None)
    union = (ends - starts) + (ge - gs) - inter
    return inter / union
