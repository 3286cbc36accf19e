from .tensor import DimensionError, GraphError, Tensor, as_tensor, backward, no_grad
from .optim import Adam, AdamState, adam_step
from . import ops

__all__ = [
    "Adam",
    "AdamState",
    "DimensionError",
    "GraphError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "no_grad",
    "ops",
]
