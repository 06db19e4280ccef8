"""Pipeline cost breakdown: one-pass grounding versus a sliding-window
baseline, with phase timings (pre / model / post) and analytic FLOPs."""

from __future__ import annotations

import json
import math
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from .anchors import AnchorGrid
from .config import RunConfig
from .data import VideoFeatures
from .encoder import SwinConfig, attention_flops, encode_multiscale_flops
from .errors import ParameterError, UsageError
from .metrics import nms_1d
from .model import GroundingModel
from .numerics.ops import _sigmoid_np
from .regression import Prediction

clock = time.perf_counter


@dataclass
class PipelineReport:
    kind: str
    pre_s: float
    model_s: float
    post_s: float
    total_s: float
    flops: int
    peak_bytes: int | None = None
    feeds: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class SlidingConfig:
    window: int = 128
    stride: int = 64
    head: str = "cosine"
    nms_threshold: float = 0.5

    def __post_init__(self):
        if self.window < 1 or not 0 < self.stride <= self.window:
            raise ParameterError(f"sliding window needs 0 < stride <= window, got {self.stride} / {self.window}")
        if self.head != "cosine":
            raise ParameterError(f"unknown window head {self.head!r}")


# ------------------------------------------------------------------ windows

def n_windows(n_frames: int, window: int, stride: int) -> int:
    """``ceil((N - W) / S) + 1`` windows; one window if the video is shorter."""
    if n_frames <= window:
        return 1
    return math.ceil((n_frames - window) / stride) + 1


def window_starts(n_frames: int, window: int, stride: int) -> np.ndarray:
    return np.arange(n_windows(n_frames, window, stride)) * stride


# ------------------------------------------------------------------ FLOPs

def matmul_flops(rows: int, k: int, cols: int) -> int:
    return 2 * rows * k * cols


def onepass_flops(n_frames: int, cfg: RunConfig, subset: int | None = None) -> int:
    """Closed-form forward cost of the one-pass network for one query.

    ``subset`` overrides the number of re-ranked anchors per scale (default
    ``min(m, anchors at that scale)``).
    """
    d = cfg.dim
    grid = AnchorGrid(n_frames, 1.0, cfg.c0, cfg.pool_factors)
    n_base = grid.counts[0]
    swin = SwinConfig(d, cfg.window_size, cfg.shift, cfg.n_heads, cfg.mlp_ratio, cfg.pool)
    total = matmul_flops(n_base, cfg.c0 * d, d)                 # anchor partition
    total += encode_multiscale_flops(n_base, cfg.pool_factors, swin)
    total += 4 * grid.size * d                                  # cosine with the query
    for l, count in enumerate(grid.counts):
        b = min(subset or cfg.m, count)
        c = grid.lengths[l]
        if cfg.rr:
            total += attention_flops(b, c, d) + 4 * b * c * d   # intra-anchor MSA + frame cosines
        if cfg.br:
            total += 2 * b * c * d * 2                          # attentive pooling
            total += matmul_flops(b, 2 * d, cfg.hidden) + matmul_flops(b, cfg.hidden, 2)
    return int(total)


def sliding_flops(n_frames: int, dim: int, sc: SlidingConfig) -> int:
    """Per-window mean pooling over ``window`` frames plus one cosine."""
    return int(n_windows(n_frames, sc.window, sc.stride) * (sc.window * dim + 4 * dim))


def redundancy_ratio(n_frames: int, dim: int, sc: SlidingConfig) -> float:
    """Sliding-window FLOPs over the same head applied to non-overlapping windows."""
    flat = SlidingConfig(sc.window, sc.window, sc.head, sc.nms_threshold)
    return sliding_flops(n_frames, dim, sc) / sliding_flops(n_frames, dim, flat)


def flop_count(pipeline: str, n_frames: int, cfg: RunConfig, sc: SlidingConfig | None = None) -> int:
    if pipeline == "one-pass":
        return onepass_flops(n_frames, cfg)
    if pipeline == "sliding-window":
        return sliding_flops(n_frames, cfg.dim, sc or SlidingConfig(cfg.slide_window, cfg.slide_stride))
    raise UsageError(f"unknown pipeline {pipeline!r}")


# -------------------------------------------------------------- pipelines

def run_onepass(video: VideoFeatures, query: np.ndarray, model: GroundingModel, n: int | None = None):
    """One feed of the one-pass pipeline. Returns ``(predictions, (pre, model, post))``."""
    n = n or model.cfg.n
    t0 = clock()
    feats = np.ascontiguousarray(video.features, dtype=model.dtype)
    q = np.asarray(query, dtype=model.dtype).reshape(1, -1)
    t1 = clock()
    enc = model.encode(feats, video.fps)
    cands = model.candidates(enc, q, model.cfg.rr, model.cfg.br, n)
    t2 = clock()
    preds = model.finalize(cands, n)[0]
    t3 = clock()
    return preds, (t1 - t0, t2 - t1, t3 - t2)


def run_sliding(video: VideoFeatures, query: np.ndarray, sc: SlidingConfig, n: int = 5, dtype=np.float64):
    """One feed of the sliding-window pipeline: slice overlapping windows,
    score each with the cosine head, aggregate, suppress and truncate."""
    t0 = clock()
    feats = np.ascontiguousarray(video.features, dtype=dtype)
    n_frames = feats.shape[0]
    starts = window_starts(n_frames, sc.window, sc.stride)
    idx = starts[:, None] + np.arange(sc.window)[None, :]
    valid = idx < n_frames
    clips = feats[np.minimum(idx, n_frames - 1)]                 # (n_win, W, D)
    q = np.asarray(query, dtype=dtype).reshape(-1)
    t1 = clock()
    w = valid.astype(dtype)
    pooled = np.einsum("nwd,nw->nd", clips, w) / w.sum(axis=1, keepdims=True)
    cos = pooled @ q / (np.linalg.norm(pooled, axis=1) * np.linalg.norm(q) + 1e-8)
    scores = _sigmoid_np(cos)
    t2 = clock()
    ends = np.minimum(starts + sc.window, n_frames)
    preds = [Prediction(float(s / video.fps), float(e / video.fps), float(v), i)
             for i, (s, e, v) in enumerate(zip(starts, ends, scores))]
    preds = nms_1d(preds, sc.nms_threshold)[:n]
    t3 = clock()
    return preds, (t1 - t0, t2 - t1, t3 - t2)


def _measure(feed, jobs, repeats: int, warmup: int):
    """Median-total repeat of running ``feed`` over all jobs."""
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    for _ in range(warmup):
        for job in jobs:
            feed(*job)
    runs = []
    for _ in range(repeats):
        phases = np.zeros(3)
        for job in jobs:
            _, t = feed(*job)
            phases += t
        runs.append(phases)
    totals = [r.sum() for r in runs]
    med = statistics.median_low(totals)
    return runs[totals.index(med)]


def _peak(feed, job) -> int:
    tracemalloc.start()
    try:
        feed(*job)
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def benchmark(videos, queries, model: GroundingModel, sc: SlidingConfig | None = None, n: int | None = None,
              repeats: int = 5, warmup: int = 1, memory: bool = True) -> list[PipelineReport]:
    """Time both pipelines over the same (video, query) feeds.

    ``queries[i]`` is the list of query vectors fed with ``videos[i]``; each
    feed is one video and one query, and totals are summed over feeds.
    """
    cfg = model.cfg
    sc = sc or SlidingConfig(cfg.slide_window, cfg.slide_stride, nms_threshold=cfg.nms_threshold)
    n = n or cfg.n
    jobs = [(v, q) for v, qs in zip(videos, queries) for q in qs]
    if not jobs:
        raise UsageError("benchmark needs at least one (video, query) feed")

    def one(v, q):
        return run_onepass(v, q, model, n)

    def slide(v, q):
        return run_sliding(v, q, sc, n, model.dtype)

    reports = []
    for kind, feed, fl in (("one-pass", one, lambda v: onepass_flops(v.n_frames, cfg)),
                           ("sliding-window", slide, lambda v: sliding_flops(v.n_frames, cfg.dim, sc))):
        pre, mod, post = _measure(feed, jobs, repeats, warmup)
        flops = sum(fl(v) for v, _ in jobs)
        peak = _peak(feed, jobs[0]) if memory else None
        reports.append(PipelineReport(kind, float(pre), float(mod), float(post), float(pre + mod + post),
                                      int(flops), peak, len(jobs)))
    return reports


def compare(reports) -> dict:
    """Speedups of the one-pass pipeline over the sliding baseline (or of the
    first report over the second when kinds repeat)."""
    reports = list(reports)
    if len(reports) < 2:
        raise UsageError("compare needs at least two reports")
    by_kind = {r.kind: r for r in reports}
    fast = by_kind.get("one-pass", reports[0])
    slow = by_kind.get("sliding-window", reports[1])
    if fast.feeds != slow.feeds:
        raise UsageError(f"reports cover different inputs ({fast.feeds} vs {slow.feeds} feeds)")

    def ratio(a, b):
        return a / b if b > 0 else float("inf")

    return {
        "kind": "comparison",
        "baseline": slow.kind,
        "speedup_pre": ratio(slow.pre_s, fast.pre_s),
        "speedup_model": ratio(slow.model_s, fast.model_s),
        "speedup_post": ratio(slow.post_s, fast.post_s),
        "speedup_total": ratio(slow.total_s, fast.total_s),
        "flops_ratio": ratio(slow.flops, fast.flops),
    }


def format_report(reports, comparison: dict | None = None) -> str:
    """One JSON record per line: each pipeline, then the comparison."""
    lines = [r.to_json() for r in reports]
    if comparison is not None:
        lines.append(json.dumps(comparison, sort_keys=True))
    return "\n".join(lines) + "\n"
