"""Named parameter storage and initialisers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .numerics import Tensor


class ParamStore(OrderedDict):
    """Ordered ``name -> Tensor`` mapping of learnable weights."""

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.astype(dtype), requires_grad=v.requires_grad))
                          for k, v in self.items())

    def copy(self) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.copy(), requires_grad=v.requires_grad)) for k, v in self.items())

    def zero_grad(self) -> None:
        for v in self.values():
            v.grad = None

    def n_params(self) -> int:
        return int(sum(v.size for v in self.values()))

    def requires_grad_(self, flag: bool = True, prefix: str = "") -> "ParamStore":
        for k, v in self.items():
            if k.startswith(prefix):
                v.requires_grad = flag
        return self


class ParamScope:
    """View of a :class:`ParamStore` under a name prefix."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.store[f"{self.prefix}.{name}"]

    def __contains__(self, name: str) -> bool:
        return f"{self.prefix}.{name}" in self.store

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.store, f"{self.prefix}.{name}")

    def add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=f"{self.prefix}.{name}")
        self.store[t.name] = t
        return t


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype)


def add_linear(scope: ParamScope, name: str, fan_in: int, fan_out: int, rng, dtype,
               gain: float = 1.0, bias: bool = True) -> None:
    scope.add(f"{name}.w", glorot(rng, fan_in, fan_out, dtype) * np.asarray(gain, dtype=dtype))
    if bias:
        scope.add(f"{name}.b", np.zeros(fan_out, dtype=dtype))


def add_layer_norm(scope: ParamScope, name: str, dim: int, dtype) -> None:
    scope.add(f"{name}.g", np.ones(dim, dtype=dtype))
    scope.add(f"{name}.b", np.zeros(dim, dtype=dtype))
