from .gradcheck import finite_difference_check
from .ops import (
    clamp_min,
    cross_entropy,
    embedding,
    gather_positions,
    lgamma,
    relu,
    rms_norm,
    select_index,
    sigmoid,
    softmax_one,
    straight_through,
)
from .tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "clamp_min",
    "cross_entropy",
    "embedding",
    "finite_difference_check",
    "gather_positions",
    "lgamma",
    "relu",
    "rms_norm",
    "select_index",
    "sigmoid",
    "softmax_one",
    "straight_through",
]
