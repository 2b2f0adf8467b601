"""Reverse-mode automatic differentiation over numpy arrays."""
from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_steps, grad_check_report
from .nn import Conv2d, Linear, LSTMCell, Module
from .optim import Adam, AdamState, adam_step, poly_lr
from .tensor import (Tape, Tensor, active_tape, as_tensor, backward, default_dtype,
                     get_default_dtype, set_default_dtype)

__all__ = [
    "Adam", "AdamState", "Conv2d", "Linear", "LSTMCell", "Module", "Tape", "Tensor",
    "active_tape", "adam_step", "as_tensor", "backward", "default_dtype", "get_default_dtype",
    "grad_check", "grad_check_steps", "grad_check_report", "load_checkpoint", "ops", "poly_lr", "save_checkpoint",
    "set_default_dtype",
]
