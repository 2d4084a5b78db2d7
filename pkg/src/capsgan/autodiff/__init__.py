"""Dense float64 tensors with reverse-mode differentiation."""

from . import ops
from .ops import OP_KINDS, forward_op
from .optim import Adam, adam_step
from .rng import derive_seed, rng_normal, rng_uniform
from .tensor import Graph, ShapeError, Tensor, as_tensor, backward, no_grad

__all__ = [
    "Adam",
    "Graph",
    "OP_KINDS",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "derive_seed",
    "forward_op",
    "no_grad",
    "ops",
    "rng_normal",
    "rng_uniform",
]
