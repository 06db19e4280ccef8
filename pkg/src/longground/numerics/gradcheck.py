"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckError, ParameterError
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    tol: float
    step: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __str__(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'} {name}: max rel err {err:.3e}"
                 for name, err in self.errors.items()
                 for ok in [err <= self.tol]]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """max |a - n| / max(|a|, |n|, floor) over entries.

    Entries smaller than ``floor`` are effectively compared on an absolute
    scale, where central differences are dominated by rounding noise.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def analytic_grads(f, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for k, p in params.items()}


def grad_check(f, params: dict[str, Tensor], step: float = 1e-5, tol: float = 1e-5,
               max_entries: int | None = None, seed: int = 0,
               floor: float = 1e-4, analytic: dict | None = None) -> GradCheckReport:
    """Compare taped gradients of scalar ``f()`` against central differences.

    ``f`` takes no arguments and reads ``params`` by closure. With
    ``max_entries`` set, only that many randomly chosen coordinates per
    parameter are perturbed. ``analytic`` overrides the taped gradients, which
    is how negative controls inject a corrupted adjoint.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    first = float(f().data)
    if float(f().data) != first:
        raise CheckError("function is not deterministic: repeated evaluation differs")

    grads = analytic if analytic is not None else analytic_grads(f, params)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, step=step)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n)
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * step)
        report.errors[name] = relative_error(np.asarray(grads[name]).reshape(-1)[idx], numeric, floor)
    return report
