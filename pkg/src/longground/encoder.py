"""Temporal swin blocks and intra-anchor self-attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .numerics import Tensor, ops
from .params import ParamScope, add_layer_norm, add_linear


@dataclass(frozen=True)
class SwinConfig:
    dim: int
    window_size: int = 8
    shift: int = 4
    n_heads: int = 4
    mlp_ratio: int = 2
    pool: str = "max"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.window_size < 1:
            raise ParameterError("window_size must be >= 1")
        if not 0 <= self.shift < self.window_size:
            raise ParameterError(f"shift must lie in [0, window_size), got {self.shift}")
        check_heads(self.dim, self.n_heads)
        if self.pool not in ("max", "mean"):
            raise ParameterError(f"unknown pooling {self.pool!r}")


def check_heads(dim: int, n_heads: int) -> int:
    if n_heads < 1 or dim % n_heads:
        raise ParameterError(f"n_heads={n_heads} does not divide dim={dim}")
    return dim // n_heads


# ------------------------------------------------------------------ params

def init_attention(scope: ParamScope, dim: int, rng, dtype, out_gain: float = 1.0) -> None:
    add_linear(scope, "qkv", dim, 3 * dim, rng, dtype)
    add_linear(scope, "proj", dim, dim, rng, dtype, gain=out_gain)


def init_mlp(scope: ParamScope, dim: int, hidden: int, rng, dtype, out_gain: float = 1.0) -> None:
    add_linear(scope, "fc1", dim, hidden, rng, dtype)
    add_linear(scope, "fc2", hidden, dim, rng, dtype, gain=out_gain)


def init_swin_block(scope: ParamScope, cfg: SwinConfig, rng, dtype, out_gain: float = 1.0) -> None:
    for ln in ("ln1", "ln2", "ln3", "ln4"):
        add_layer_norm(scope, ln, cfg.dim, dtype)
    init_attention(scope.scope("wmsa"), cfg.dim, rng, dtype, out_gain)
    init_mlp(scope.scope("mlp1"), cfg.dim, cfg.mlp_ratio * cfg.dim, rng, dtype, out_gain)
    init_attention(scope.scope("swmsa"), cfg.dim, rng, dtype, out_gain)
    init_mlp(scope.scope("mlp2"), cfg.dim, cfg.mlp_ratio * cfg.dim, rng, dtype, out_gain)


def init_intra_anchor(scope: ParamScope, dim: int, max_anchor_len: int, rng, dtype,
                      out_gain: float = 1.0) -> None:
    scope.add("pos", (0.02 * rng.standard_normal((max_anchor_len, dim))).astype(dtype))
    add_layer_norm(scope, "ln", dim, dtype)
    init_attention(scope.scope("msa"), dim, rng, dtype, out_gain)


# -------------------------------------------------------------- primitives

def layer_norm(x: Tensor, p: ParamScope, name: str, eps: float = 1e-5) -> Tensor:
    return ops.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], eps)


def mlp(x: Tensor, p: ParamScope) -> Tensor:
    h = ops.gelu(ops.linear(x, p["fc1.w"], p["fc1.b"]))
    return ops.linear(h, p["fc2.w"], p["fc2.b"])


def multi_head_attention(x: Tensor, p: ParamScope, n_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over ``x`` of shape ``(B, S, D)``.

    ``mask`` is a boolean ``(B, S, S)`` array; ``mask[b, i, j]`` allows query
    ``i`` to attend to key ``j``.
    """
    b, s, d = x.shape
    dh = check_heads(d, n_heads)
    qkv = ops.linear(x, p["qkv.w"], p["qkv.b"])
    qkv = ops.transpose(ops.reshape(qkv, (b, s, 3, n_heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = ops.scale(q @ ops.swapaxes(k, -1, -2), 1.0 / math.sqrt(dh))
    full_mask = None
    if mask is not None:
        full_mask = np.broadcast_to(mask[:, None, :, :], (b, n_heads, s, s))
    attn = ops.softmax(logits, axis=-1, mask=full_mask)
    out = ops.reshape(ops.transpose(attn @ v, (0, 2, 1, 3)), (b, s, d))
    return ops.linear(out, p["proj.w"], p["proj.b"])


def window_masks(seq_len: int, window: int, shift: int, valid: np.ndarray | None = None):
    """Index plan and attention masks for (shifted) window attention.

    Returns ``(padded_len, order, mask)``: ``order`` maps window slots to
    sequence positions (cyclically shifted by ``shift``) and ``mask`` has shape
    ``(n_windows, window, window)``. Keys are allowed only if valid and in the
    same wrap segment as the query, so the cyclic shift never joins the two
    ends of the sequence.
    """
    n_win = max(1, math.ceil(seq_len / window))
    sp = n_win * window
    ok = np.zeros(sp, dtype=bool)
    ok[:seq_len] = True if valid is None else np.asarray(valid, dtype=bool)
    order = (np.arange(sp) + shift) % sp
    wrapped = np.zeros(sp, dtype=bool)
    if shift:
        wrapped[sp - shift:] = True
    key_ok = ok[order].reshape(n_win, window)
    seg = wrapped.reshape(n_win, window)
    mask = (seg[:, :, None] == seg[:, None, :]) & key_ok[:, None, :]
    return sp, order, mask


def window_msa(x: Tensor, p: ParamScope, window: int, shift: int, n_heads: int,
               valid: np.ndarray | None = None) -> Tensor:
    """(Shifted) window multi-head self-attention over an ``S x D`` sequence."""
    if window < 1:
        raise ParameterError("window_size must be >= 1")
    s, d = x.shape
    check_heads(d, n_heads)
    sp, order, mask = window_masks(s, window, shift % max(window, 1), valid)
    n_win = sp // window
    xp = ops.pad(x, 0, sp - s, axis=0)
    xs = ops.take(xp, order, axis=0)
    out = multi_head_attention(ops.reshape(xs, (n_win, window, d)), p, n_heads, mask)
    inv = np.argsort(order)
    out = ops.take(ops.reshape(out, (sp, d)), inv, axis=0)
    return out if sp == s else out[:s]


def dense_msa(x: Tensor, p: ParamScope, n_heads: int, valid: np.ndarray | None = None) -> Tensor:
    """Global multi-head self-attention; the reference for single-window cases."""
    s, d = x.shape
    mask = None
    if valid is not None:
        mask = np.broadcast_to(np.asarray(valid, bool)[None, None, :], (1, s, s))
    return ops.reshape(multi_head_attention(ops.reshape(x, (1, s, d)), p, n_heads, mask), (s, d))


def swin_block(z: Tensor, p: ParamScope, cfg: SwinConfig, valid: np.ndarray | None = None) -> Tensor:
    """W-MSA, MLP, SW-MSA, MLP, each pre-normed with a residual connection."""
    eps = cfg.ln_eps
    z = ops.add(window_msa(layer_norm(z, p, "ln1", eps), p.scope("wmsa"), cfg.window_size, 0,
                           cfg.n_heads, valid), z)
    z = ops.add(mlp(layer_norm(z, p, "ln2", eps), p.scope("mlp1")), z)
    z = ops.add(window_msa(layer_norm(z, p, "ln3", eps), p.scope("swmsa"), cfg.window_size, cfg.shift,
                           cfg.n_heads, valid), z)
    z = ops.add(mlp(layer_norm(z, p, "ln4", eps), p.scope("mlp2")), z)
    return z


def temporal_pool(x: Tensor, r: int, valid: np.ndarray, kind: str = "max"):
    """Pool ``r`` consecutive rows; the tail is padded by repeating the last row
    (max) or excluded from the average (mean). Returns ``(pooled, valid)``."""
    if r == 1:
        return x, valid
    n, d = x.shape
    m = math.ceil(n / r)
    idx = np.minimum(np.arange(m * r), n - 1)
    groups = ops.reshape(ops.take(x, idx, axis=0), (m, r, d))
    present = (np.arange(m * r) < n).reshape(m, r)
    ok = np.concatenate([valid, np.zeros(m * r - n, bool)]).reshape(m, r)
    if kind == "max":
        pooled = ops.max(groups, axis=1)
    else:
        w = (present & ok).astype(x.dtype)
        w /= np.maximum(w.sum(axis=1, keepdims=True), 1)
        pooled = ops.sum(ops.mul(groups, np.broadcast_to(w[:, :, None], (m, r, d)).copy()), axis=1)
    return pooled, ok.any(axis=1)


def encode_multiscale(e0: Tensor, blocks: list[ParamScope], pool_factors, cfg: SwinConfig,
                      valid: np.ndarray | None = None):
    """Cascade of swin blocks, each followed by pooling with factor ``r_l``.

    Returns ``(features, masks)``: one ``(n_l, D)`` tensor and one boolean
    validity mask per scale.
    """
    if len(blocks) != len(pool_factors):
        raise ParameterError(f"{len(blocks)} blocks for {len(pool_factors)} scales")
    z = e0
    mask = np.ones(e0.shape[0], bool) if valid is None else np.asarray(valid, bool)
    feats, masks = [], []
    for p, r in zip(blocks, pool_factors):
        z = swin_block(z, p, cfg, mask)
        z, mask = temporal_pool(z, int(r), mask, cfg.pool)
        feats.append(z)
        masks.append(mask)
    return feats, masks


def intra_anchor_msa(frames: Tensor, p: ParamScope, n_heads: int, frame_valid: np.ndarray | None = None,
                     ln_eps: float = 1e-5) -> Tensor:
    """``MSA(LN(V + pos)) + V`` over each anchor's frames.

    ``frames`` is ``(B, C, D)`` (B anchors of one scale) or ``(C, D)``.
    ``frame_valid`` (``(B, C)``) marks real frames; padded frames are masked
    out as keys.
    """
    squeeze = frames.ndim == 2
    if squeeze:
        frames = ops.reshape(frames, (1,) + frames.shape)
        if frame_valid is not None:
            frame_valid = np.asarray(frame_valid)[None]
    b, c, d = frames.shape
    pos = p["pos"]
    if c > pos.shape[0]:
        raise ParameterError(f"anchor of {c} frames exceeds positional table of {pos.shape[0]}")
    pos_rows = pos if c == pos.shape[0] else ops.index(pos, slice(0, c))
    h = ops.layer_norm(ops.add_bias(frames, pos_rows), p["ln.g"], p["ln.b"], ln_eps)
    mask = None
    if frame_valid is not None:
        fv = np.asarray(frame_valid, bool)
        mask = np.broadcast_to(fv[:, None, :], (b, c, c))
    out = ops.add(multi_head_attention(h, p.scope("msa"), n_heads, mask), frames)
    return ops.reshape(out, (c, d)) if squeeze else out


# ------------------------------------------------------------------- FLOPs

def attention_flops(n_seq: int, seq_len: int, dim: int) -> int:
    """Multiply-adds x2 for QKV, scores, weighted sum and output projection."""
    proj = 2 * n_seq * seq_len * dim * 3 * dim + 2 * n_seq * seq_len * dim * dim
    core = 2 * 2 * n_seq * seq_len * seq_len * dim
    return proj + core


def window_msa_flops(seq_len: int, dim: int, window: int) -> int:
    n_win = max(1, math.ceil(seq_len / window))
    return attention_flops(n_win, window, dim)


def mlp_flops(rows: int, dim: int, hidden: int) -> int:
    return 2 * rows * dim * hidden * 2


def swin_block_flops(seq_len: int, cfg: SwinConfig) -> int:
    return (2 * window_msa_flops(seq_len, cfg.dim, cfg.window_size)
            + 2 * mlp_flops(seq_len, cfg.dim, cfg.mlp_ratio * cfg.dim))


def encode_multiscale_flops(n_base: int, pool_factors, cfg: SwinConfig) -> int:
    total, n = 0, n_base
    for r in pool_factors:
        total += swin_block_flops(n, cfg)
        n = math.ceil(n / r)
    return total
