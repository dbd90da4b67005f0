"""Float64 reverse-mode autodiff, layers, Adam and budget accounting."""

from . import functional
from .budget import ModelBudget, count_budget
from .gradcheck import grad_check
from .nn import Conv1d, FeedForward, LayerNorm, Linear, Module, MultiheadAttention, Parameter
from .optim import Adam, adam_step
from .tensor import ShapeError, Tensor, backward_of, no_grad

__all__ = [
    "functional", "ModelBudget", "count_budget", "grad_check", "Conv1d", "FeedForward",
    "LayerNorm", "Linear", "Module", "MultiheadAttention", "Parameter", "Adam", "adam_step",
    "ShapeError", "Tensor", "no_grad", "backward_of",
]
