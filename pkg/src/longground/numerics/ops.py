"""Differentiable primitives.

Shapes must match exactly for binary elementwise operations. The only
implicit expansion is a Python/NumPy scalar operand and the trailing-axis
affine used by :func:`add_bias` and :func:`layer_norm`.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError, ParameterError
from .tensor import Tensor, active_tape


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _wrap(data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def _check_finite(x: np.ndarray, op: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{op}: non-finite input")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _binary(a, b, op: str):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise DimensionError(f"{op}: at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    if a.shape != b.shape:
        # expand a constant scalar operand; prefer the lower-rank side
        a_ok = a.size == 1 and not a.requires_grad
        b_ok = b.size == 1 and not b.requires_grad
        if b_ok and (not a_ok or b.ndim <= a.ndim):
            b = Tensor(np.full(a.shape, b.data.reshape(-1)[0], dtype=a.dtype))
        elif a_ok:
            a = Tensor(np.full(b.shape, a.data.reshape(-1)[0], dtype=b.dtype))
    _same_shape(a, b, op)
    return a, b


# --------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _binary(a, b, "add")
    return _wrap(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b, "sub")
    return _wrap(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b, "mul")
    ad, bd = a.data, b.data
    return _wrap(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _wrap(out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a: Tensor) -> Tensor:
    return _wrap(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _wrap(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    _check_finite(a.data, "exp")
    out = np.exp(a.data)
    return _wrap(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    _check_finite(a.data, "log")
    if (a.data <= 0).any():
        raise NumericError("log: non-positive input")
    ad = a.data
    return _wrap(np.log(ad), (a,), lambda g: (g / ad,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and is one transcendental call
    out = np.tanh(0.5 * x)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a: Tensor) -> Tensor:
    _check_finite(a.data, "sigmoid")
    out = _sigmoid_np(a.data)
    return _wrap(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _wrap(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _wrap(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


_GELU_C = float(np.sqrt(2.0 / np.pi))   # python float so float32 inputs stay float32


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU (smooth, so finite differences behave)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _wrap(out, (a,), bw)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _wrap(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _binary(a, b, "maximum")
    pick_a = a.data >= b.data
    return _wrap(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (g * pick_a, g * ~pick_a))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _binary(a, b, "minimum")
    pick_a = a.data <= b.data
    return _wrap(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (g * pick_a, g * ~pick_a))


def where(mask, a, b) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    a, b = _binary(a, b, "where")
    if mask.shape != a.shape:
        raise DimensionError(f"where: mask shape {mask.shape} != {a.shape}")
    return _wrap(np.where(mask, a.data, b.data), (a, b),
                 lambda g: (g * mask, g * ~mask))


# ------------------------------------------------------------------ affine

def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` spanning the trailing axes of ``x``."""
    if b.ndim < 1 or b.ndim > x.ndim or b.shape != x.shape[x.ndim - b.ndim:]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match trailing axes of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))
    return _wrap(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def mul_gain(x: Tensor, w: Tensor) -> Tensor:
    """``x * w`` with ``w`` spanning the last axis of ``x``."""
    if w.ndim != 1 or w.shape[0] != x.shape[-1]:
        raise DimensionError(f"mul_gain: gain {w.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    xd, wd = x.data, w.data
    return _wrap(xd * wd, (x, w), lambda g: (g * wd, (g * xd).sum(axis=lead)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (a weight applied to every row of ``a``) or has the
    same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: need >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents {a.shape[-1]} and {b.shape[-2]} differ")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents {a.shape[:-2]} and {b.shape[:-2]} differ")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _wrap(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


# -------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _wrap(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def max(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _wrap(out, (x,), bw)


# ----------------------------------------------------------- normalisation

def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-subtracted softmax. ``mask`` (bool, same shape) marks allowed entries;
    a row with no allowed entry yields all zeros."""
    _check_finite(x.data, "softmax")
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax: mask shape {mask.shape} != {x.shape}")
        xd = np.where(mask, xd, -np.inf)
    m = np.max(xd, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _wrap(out.astype(x.dtype, copy=False), (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "log_softmax")
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(xd - m).sum(axis=axis, keepdims=True))
    out = xd - lse
    p = np.exp(out)
    return _wrap(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data
    out = xhat * gd + bias.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _wrap(out, (x, gain, bias), bw)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """``x / (||x|| + eps)`` along ``axis``."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    d = n + eps
    out = xd / d

    def bw(g):
        safe_n = np.where(n > 0, n, 1.0)
        proj = (g * xd).sum(axis=axis, keepdims=True)
        return (g / d - xd * proj / (d * d * safe_n),)

    return _wrap(out, (x,), bw)


# ---------------------------------------------------------------- structure

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _wrap(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _wrap(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def index(x: Tensor, key) -> Tensor:
    shape = x.shape
    basic = _is_basic(key)

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        if basic:
            gx[key] += g          # basic indexing never repeats an element
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _wrap(np.array(x.data[key]), (x,), bw)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate on backward."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    if indices.ndim != 1 and axis != 0:
        raise DimensionError("take: multi-dimensional indices only along axis 0")
    shape = x.shape
    flat = indices.reshape(-1)
    unique = np.unique(flat).size == flat.size

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gm = np.moveaxis(gx, axis, 0)
        gg = (np.moveaxis(g, axis, 0) if indices.ndim == 1 else g).reshape((flat.size,) + gm.shape[1:])
        if unique:
            gm[flat] = gg
        else:
            order = np.argsort(flat, kind="stable")
            keys, first = np.unique(flat[order], return_index=True)
            gm[keys] = np.add.reduceat(gg[order], first, axis=0)
        return (gx,)

    return _wrap(np.take(x.data, indices, axis=axis), (x,), bw)


def concat(xs, axis: int = 0) -> Tensor:
    xs = tuple(xs)
    axis = axis % xs[0].ndim
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in xs], axis=axis)
    return _wrap(out, xs, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs, axis: int = 0) -> Tensor:
    xs = tuple(xs)
    out = np.stack([t.data for t in xs], axis=axis)
    n = len(xs)
    return _wrap(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def pad(x: Tensor, before: int, after: int, axis: int = 0) -> Tensor:
    """Zero-pad along ``axis``."""
    if before == 0 and after == 0:
        return x
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    n = x.shape[axis]
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + n)
    sl = tuple(sl)
    return _wrap(np.pad(x.data, widths), (x,), lambda g: (g[sl],))


def roll(x: Tensor, shift: int, axis: int = 0) -> Tensor:
    return _wrap(np.roll(x.data, shift, axis=axis), (x,),
                 lambda g: (np.roll(g, -shift, axis=axis),))
