"""Boundary-offset prediction and interval adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .numerics import Tensor, ops
from .params import ParamScope, add_linear


@dataclass(frozen=True)
class Prediction:
    t_s: float
    t_e: float
    score: float
    anchor: int = -1

    @property
    def span(self) -> tuple[float, float]:
        return (self.t_s, self.t_e)


def init_regressor(scope: ParamScope, dim: int, hidden: int, rng, dtype, out_gain: float = 1.0) -> None:
    scope.add("att_w", (rng.standard_normal((dim, 1)) / np.sqrt(dim)).astype(dtype))
    add_linear(scope, "fc1", 2 * dim, hidden, rng, dtype)
    add_linear(scope, "fc2", hidden, 2, rng, dtype, gain=out_gain)


def attentive_pool(vhat: Tensor, w: Tensor, frame_valid: np.ndarray | None = None) -> Tensor:
    """Softmax(``vhat @ w``)-weighted sum of frames. ``vhat`` is ``(B, C, D)``."""
    b, c, d = vhat.shape
    if frame_valid is None:
        frame_valid = np.ones((b, c), bool)
    frame_valid = np.asarray(frame_valid, bool)
    if not frame_valid.any(axis=1).all():
        raise UsageError("attentive_pool: an anchor has no valid frames")
    logits = ops.reshape(ops.matmul(vhat, w), (b, c))
    a = ops.softmax(logits, axis=-1, mask=frame_valid)
    return ops.reshape(ops.reshape(a, (b, 1, c)) @ vhat, (b, d))


def predict_bias(e: Tensor, pooled: Tensor, q: Tensor, p: ParamScope) -> Tensor:
    """MLP over ``[e * q ; pooled * q]``; returns ``(P, 2)`` start/end offsets."""
    if not (e.shape == pooled.shape == q.shape):
        raise UsageError(f"fusion inputs disagree: {e.shape}, {pooled.shape}, {q.shape}")
    fused = ops.concat([ops.mul(e, q), ops.mul(pooled, q)], axis=-1)
    h = ops.gelu(ops.linear(fused, p["fc1.w"], p["fc1.b"]))
    return ops.linear(h, p["fc2.w"], p["fc2.b"])


def adjust_bounds(anchor, delta, video_len: float) -> tuple[float, float]:
    """Shift each boundary by its offset times the anchor length, clamp to the
    video, and fall back to the anchor if the result is empty."""
    t_s, t_e = anchor
    d_s, d_e = delta
    length = t_e - t_s
    s = min(max(t_s + d_s * length, 0.0), video_len)
    e = min(max(t_e + d_e * length, 0.0), video_len)
    if not s < e:
        return float(t_s), float(t_e)
    return float(s), float(e)


def adjust_bounds_array(starts, ends, deltas, video_len: float):
    starts, ends = np.asarray(starts, float), np.asarray(ends, float)
    deltas = np.asarray(deltas, float).reshape(-1, 2)
    length = ends - starts
    s = np.clip(starts + deltas[:, 0] * length, 0.0, video_len)
    e = np.clip(ends + deltas[:, 1] * length, 0.0, video_len)
    bad = ~(s < e)
    return np.where(bad, starts, s), np.where(bad, ends, e)


def top_n(predictions, n: int, use_nms: bool = False, nms_threshold: float = 0.5) -> list[Prediction]:
    """Best ``n`` predictions in the given rank order (optionally after NMS)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    preds = list(predictions)
    if use_nms:
        from .metrics import nms_1d
        preds = nms_1d(preds, nms_threshold)
    return preds[:n]
