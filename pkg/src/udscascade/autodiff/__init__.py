"""Minimal float64 tensor engine with reverse-mode autodiff."""

from . import functional
from .checkpoint import dump_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .nn import MLP, LayerNorm, Linear, Module, Parameter
from .optim import adam_update, clip_grad_norm
from .tensor import ShapeError, Tensor, as_tensor, no_grad

__all__ = [
    "MLP", "LayerNorm", "Linear", "Module", "Parameter", "ShapeError", "Tensor",
    "adam_update", "as_tensor", "clip_grad_norm", "dump_checkpoint", "functional",
    "grad_check", "load_checkpoint", "no_grad", "save_checkpoint",
]
