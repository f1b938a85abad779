"""Minimal differentiable numeric core."""

from . import tensor
from .checkpoint import CheckpointError, load_arrays, load_into, save_checkpoint
from .gradcheck import GradCheckReport, NonDeterministicClosure, finite_difference_check
from .layers import Embedding, FeedForward, GRUCell, LayerNorm, Linear, MultiHeadAttention, causal_mask
from .optim import Adam
from .params import ParameterStore
from .tensor import NaNError, ShapeError, Tensor, no_grad

__all__ = [
    "Adam",
    "CheckpointError",
    "Embedding",
    "FeedForward",
    "GRUCell",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MultiHeadAttention",
    "NaNError",
    "NonDeterministicClosure",
    "ParameterStore",
    "ShapeError",
    "Tensor",
    "causal_mask",
    "finite_difference_check",
    "load_arrays",
    "load_into",
    "no_grad",
    "save_checkpoint",
    "tensor",
]
