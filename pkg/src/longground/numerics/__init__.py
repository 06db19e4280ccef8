"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from . import ops
from .gradcheck import GradCheckReport, grad_check, relative_error
from .tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "GradCheckReport",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "grad_check",
    "ops",
    "relative_error",
]
