"""Minimal reverse-mode differentiable tensor engine."""
from . import ops
from .checkpoint import CheckpointError, config_hash, load_checkpoint, save_checkpoint
from .optim import ParamStore, adam_step
from .tensor import ShapeError, Tensor, backward, grad_enabled, no_grad, set_debug

__all__ = [
    "CheckpointError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "config_hash",
    "grad_enabled",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
    "set_debug",
]
