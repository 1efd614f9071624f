"""Reverse-mode autodiff over dense float64 tensors."""
from . import ops
from .core import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    grad_enabled,
    no_grad,
)
from .gradcheck import grad_check
from .optim import AdamState, ParamStore, Scope, adam_step

__all__ = [
    "AdamState", "NonFiniteError", "ParamStore", "Scope", "ShapeError", "Tape",
    "TapeError", "Tensor", "adam_step", "as_tensor", "backward", "current_tape",
    "grad_check", "grad_enabled", "no_grad", "ops",
]
