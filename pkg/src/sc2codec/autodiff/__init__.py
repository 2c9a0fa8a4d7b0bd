"""Minimal dense-tensor math with tape-based reverse-mode autodiff."""

from . import ops
from .gradcheck import GradCheckReport, grad_check, tape_gradients
from .optim import AdamW
from .tensor import (
    DEFAULT_DTYPE,
    GradientError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    debug_checks_enabled,
    set_debug_checks,
)

__all__ = [
    "AdamW",
    "DEFAULT_DTYPE",
    "GradCheckReport",
    "GradientError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "current_tape",
    "debug_checks_enabled",
    "grad_check",
    "ops",
    "set_debug_checks",
    "tape_gradients",
]
