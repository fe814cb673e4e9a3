"""Small reverse-mode autodiff engine on float64 numpy arrays."""

from . import ops
from .optim import AdamState, adam_step
from .tape import NonFiniteError, ShapeError, Tape, Tensor, as_tensor, backward

__all__ = [
    "AdamState",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "ops",
]
