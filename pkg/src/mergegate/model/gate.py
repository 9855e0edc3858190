"""The token-deletion gate and hard compaction of gated batches."""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, gather_positions, rms_norm, sigmoid
from .config import GateOutput


def gumbel_noise(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """-log(log(u1)/log(u2)) for uniform pairs; zero when u1 == u2."""
    return -np.log(np.log(u1) / np.log(u2))


def delete_gate(
    hidden: Tensor,
    w: Tensor,
    b: Tensor,
    norm_gain: Tensor,
    floor: float,
    valid_mask: np.ndarray,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> GateOutput:
    """floor * sigmoid(rms_norm(hidden) @ w + b), optionally with Gumbel
    noise on the logit.

    Outputs lie in (floor, 0); values above floor/2 count as kept. Padding
    positions are forced to exactly `floor` so they are always deleted and
    contribute no gradient.
    """
    batch, n, d_model = hidden.shape
    normed = rms_norm(hidden, norm_gain)
    logit = (normed @ w.reshape(d_model, 1)).reshape(batch, n) + b
    if noise is not None:
        u1, u2 = noise
        logit = logit + gumbel_noise(u1, u2).astype(hidden.dtype)
    values = sigmoid(logit) * float(floor)

    valid = valid_mask.astype(hidden.dtype)
    values = values * valid + (1.0 - valid) * float(floor)

    keep = values.numpy() > floor / 2.0
    return GateOutput(
        values=values,
        keep_mask=keep,
        valid_mask=valid_mask.astype(bool),
        kept_counts=keep.sum(axis=1),
        floor=floor,
    )


def zero_gate(batch: int, n: int, valid_mask: np.ndarray, floor: float, dtype) -> GateOutput:
    """All-zero gate (keep everything); used by deletion_mode 'none'."""
    values = np.where(valid_mask, 0.0, floor).astype(dtype)
    keep = values > floor / 2.0
    return GateOutput(
        values=Tensor(values),
        keep_mask=keep,
        valid_mask=valid_mask.astype(bool),
        kept_counts=keep.sum(axis=1),
        floor=floor,
    )


def saturate_gate(gate: GateOutput) -> GateOutput:
    """Clamp gate values to exactly {0, floor} according to the keep mask.

    Detaches the values; intended for soft/hard agreement checks where the
    residual mass of partially-open gates would otherwise differ.
    """
    sat = np.where(gate.keep_mask & gate.valid_mask, 0.0, gate.floor).astype(
        gate.values.dtype
    )
    return GateOutput(
        values=Tensor(sat),
        keep_mask=gate.keep_mask.copy(),
        valid_mask=gate.valid_mask,
        kept_counts=gate.kept_counts.copy(),
        floor=gate.floor,
    )


def hard_delete(
    hidden: Tensor,
    gate: GateOutput,
    positions: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray, np.ndarray, int]:
    """Drop deleted positions and repad to the longest surviving sequence.

    Returns (compacted hidden, new validity mask, surviving original
    positions [B, N'], rescue count). A sequence whose every token is
    deleted keeps its single highest-gate token so downstream attention
    always has at least one column; `rescued` counts such sequences.

    Surviving positions preserve their original indices (strictly
    increasing per row), so later relative-position biases are computed
    from true pairwise distances rather than compacted ones.
    """
    batch, n, _ = hidden.shape
    if positions is None:
        positions = np.broadcast_to(np.arange(n), (batch, n))

    keep = gate.keep_mask & gate.valid_mask
    rescued = 0
    g_vals = gate.values.numpy()
    for row in range(batch):
        if not keep[row].any():
            candidates = np.where(gate.valid_mask[row], g_vals[row], -np.inf)
            keep[row, int(np.argmax(candidates))] = True
            rescued += 1

    counts = keep.sum(axis=1)
    new_n = int(counts.max())
    idx = np.zeros((batch, new_n), dtype=np.int64)
    new_valid = np.zeros((batch, new_n), dtype=bool)
    kept_pos = np.zeros((batch, new_n), dtype=np.int64)
    for row in range(batch):
        cols = np.flatnonzero(keep[row])
        idx[row, : cols.size] = cols
        new_valid[row, : cols.size] = True
        kept_pos[row, : cols.size] = positions[row, cols]

    compact = gather_positions(hidden, idx)
    compact = compact * new_valid[:, :, None].astype(hidden.dtype)
    return compact, new_valid, kept_pos, rescued
