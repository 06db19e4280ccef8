"""Dense tensors and the operation tape used for reverse-mode differentiation."""

from __future__ import annotations

import threading

import numpy as np

from ..errors import UsageError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    """Return the innermost tape recording on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional array of reals with an optional gradient slot.

    Leaves created by the user carry ``requires_grad``; tensors produced by an
    operation while a :class:`Tape` is recording inherit it from their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # Operator sugar; the implementations live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations on tensors that require gradients are
    appended while the tape is active. :meth:`backward` replays the adjoints in
    reverse recording order exactly once.
    """

    def __init__(self):
        self._nodes: list[tuple] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise UsageError("tape has already been consumed by backward()")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            raise UsageError("tape stack corrupted: tapes must be exited in LIFO order")

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        out._tape = self
        self._nodes.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor, visit=None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

        ``visit`` is an optional callback receiving the index of each node as it
        is processed, exposed for tests of the traversal order.
        """
        if self._consumed:
            raise UsageError("backward() already ran on this tape; record a new one")
        if loss.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise UsageError("loss was not recorded on this tape")
        self._consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        for k in range(len(self._nodes) - 1, -1, -1):
            out, inputs, fn = self._nodes[k]
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if visit is not None:
                visit(k)
            in_grads = fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if t._tape is None:
                    # leaf
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                elif key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        self._nodes.clear()


def backward(loss: Tensor) -> None:
    """Run reverse mode from a scalar ``loss`` through the tape that produced it."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward() expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise UsageError("loss is not reachable from any tape (was it computed inside `with Tape():`?)")
    loss._tape.backward(loss)
