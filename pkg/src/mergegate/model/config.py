"""Architecture configuration and gate/batch containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..numerics import Tensor

DELETION_MODES = ("none", "soft", "hard")


@dataclass
class ModelConfig:
    d_model: int = 64
    d_ff: int = 128
    n_encoder_layers: int = 3
    n_decoder_layers: int = 3
    n_heads: int = 4
    d_head: int = 16
    gate_layer: int = 2           # 1-based encoder layer whose output feeds the gate
    gate_floor: float = -30.0     # lower bound of the gate range; must be negative
    vocab_size: int = 359
    n_buckets: int = 32
    max_distance: int = 128
    use_gumbel_noise: bool = False
    deletion_mode: str = "soft"
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_heads * self.d_head != self.d_model:
            raise ValueError(
                f"n_heads*d_head must equal d_model ({self.n_heads}*{self.d_head} != {self.d_model})"
            )
        if self.gate_floor >= 0:
            raise ValueError("gate_floor must be negative")
        if not 1 <= self.gate_layer < self.n_encoder_layers:
            raise ValueError(
                f"gate_layer must lie in [1, n_encoder_layers), got {self.gate_layer}"
            )
        if self.deletion_mode not in DELETION_MODES:
            raise ValueError(f"deletion_mode must be one of {DELETION_MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "n_heads": self.n_heads,
            "d_head": self.d_head,
            "gate_layer": self.gate_layer,
            "gate_floor": self.gate_floor,
            "vocab_size": self.vocab_size,
            "n_buckets": self.n_buckets,
            "max_distance": self.max_distance,
            "use_gumbel_noise": self.use_gumbel_noise,
            "deletion_mode": self.deletion_mode,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class GateOutput:
    """Per-position gate values plus the derived keep/delete decisions.

    `values` lie in [floor, 0]; a position is kept iff its value is strictly
    above floor/2. Padding positions are forced to the floor (treated as
    deleted) and excluded from every statistic via `valid_mask`.
    """

    values: Tensor                # [B, N]
    keep_mask: np.ndarray         # bool [B, N]
    valid_mask: np.ndarray        # bool [B, N], non-pad positions
    kept_counts: np.ndarray       # int [B], kept non-pad positions per sequence
    floor: float

    @property
    def deletion_ratio(self) -> float:
        """Fraction of non-pad tokens at or below the hard threshold."""
        n_valid = int(self.valid_mask.sum())
        return 1.0 - float(self.kept_counts.sum()) / n_valid

    @property
    def per_sequence_reduction(self) -> np.ndarray:
        valid = self.valid_mask.sum(axis=1)
        return 1.0 - self.kept_counts / np.maximum(valid, 1)


@dataclass
class Batch:
    encoder_ids: np.ndarray       # int [B, N]
    encoder_valid: np.ndarray     # bool [B, N], True on real tokens
    decoder_ids: np.ndarray       # int [B, M], decoder inputs (start token first)
    decoder_targets: np.ndarray   # int [B, M], pad id marks ignored positions

    def __post_init__(self):
        if self.encoder_ids.shape != self.encoder_valid.shape:
            raise ValueError("encoder ids/mask shape mismatch")
        if self.decoder_ids.shape != self.decoder_targets.shape:
            raise ValueError("decoder ids/targets shape mismatch")

    @property
    def size(self) -> int:
        return self.encoder_ids.shape[0]


@dataclass
class EncoderResult:
    memory: Tensor                           # [B, N', d_model], final-normed
    memory_valid: np.ndarray                 # bool [B, N']
    gate: Optional[GateOutput]               # None when a pooling baseline replaced the gate
    cross_gate: Optional[Tensor]             # gate values added to cross-attention scores
    kept_positions: Optional[np.ndarray]     # int [B, N'] original indices (hard mode / pooling)
    scores: list = field(default_factory=list)  # scaled pre-bias score tensors, gate layer onward
    stats: dict = field(default_factory=dict)
