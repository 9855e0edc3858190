"""Relative-position bucketing and the gated attention kernel."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor, embedding, softmax_one
from ..numerics.tensor import transpose as ttranspose

MASK_NEG = -1e9


def relative_position_bucket(
    relative_position: np.ndarray,
    bidirectional: bool = True,
    n_buckets: int = 32,
    max_distance: int = 128,
) -> np.ndarray:
    """Map signed relative distances (key_pos - query_pos) to bucket indices.

    Half the buckets cover exact small offsets, the rest grow
    logarithmically up to max_distance; distance 0 always lands in bucket 0.
    In bidirectional mode the bucket range is split between the two signs.
    """
    rel = np.asarray(relative_position, dtype=np.int64)
    buckets = np.zeros_like(rel)
    if bidirectional:
        n_buckets //= 2
        buckets += (rel > 0).astype(np.int64) * n_buckets
        rel = np.abs(rel)
    else:
        rel = -np.minimum(rel, 0)
    max_exact = n_buckets // 2
    is_small = rel < max_exact
    with np.errstate(divide="ignore"):
        log_ratio = np.log(np.maximum(rel, 1) / max_exact) / math.log(max_distance / max_exact)
    large = max_exact + (log_ratio * (n_buckets - max_exact)).astype(np.int64)
    large = np.minimum(large, n_buckets - 1)
    buckets += np.where(is_small, rel, large)
    return buckets


def relative_position_bias(
    bias_table: Tensor,
    query_positions: np.ndarray,
    key_positions: np.ndarray,
    bidirectional: bool = True,
    max_distance: int = 128,
) -> Tensor:
    """Learned per-head additive bias for every query/key position pair.

    Positions may be [N] (shared across the batch) or [B, N] (e.g. the
    surviving original indices after hard deletion, so bucketing still sees
    the true pairwise distances). Returns [1 or B, heads, q_len, k_len].
    """
    q = np.asarray(query_positions)
    k = np.asarray(key_positions)
    if q.ndim == 1:
        rel = k[None, None, :] - q[None, :, None]           # [1, Nq, Nk]
    else:
        rel = k[:, None, :] - q[:, :, None]                 # [B, Nq, Nk]
    n_buckets = bias_table.shape[0]
    bucket = relative_position_bucket(
        rel, bidirectional=bidirectional, n_buckets=n_buckets, max_distance=max_distance
    )
    values = embedding(bias_table, bucket)                  # [B?, Nq, Nk, H]
    return ttranspose(values, (0, 3, 1, 2))                 # [B?, H, Nq, Nk]


def split_heads(x: Tensor, n_heads: int, d_head: int) -> Tensor:
    b, n, _ = x.shape
    return x.reshape(b, n, n_heads, d_head).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def soft_deletion_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    position_bias: Tensor | None = None,
    mask_add: Tensor | np.ndarray | None = None,
    gate: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """softmax_one((q k^T)/sqrt(d_head) + bias + mask + gate) v.

    Gate values are added column-wise: every query pays the same additive
    penalty for attending to a given key, so a key at the gate floor is
    effectively masked. Returns (output, scaled_scores); the scores exclude
    bias/mask/gate and feed the attention-score regularizer.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    d_head = q.shape[-1]
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d_head))
    total = scores
    if position_bias is not None:
        total = total + position_bias
    if mask_add is not None:
        total = total + mask_add
    if gate is not None:
        b, n_k = gate.shape
        total = total + gate.reshape(b, 1, 1, n_k)
    attn = softmax_one(total, axis=-1)
    return attn @ v, scores


def additive_mask(valid: np.ndarray, dtype=np.float64) -> np.ndarray:
    """[B, N] boolean validity -> [B, 1, 1, N] additive key mask."""
    return np.where(valid, 0.0, MASK_NEG).astype(dtype)[:, None, None, :]


def causal_mask(n: int, dtype=np.float64) -> np.ndarray:
    mask = np.triu(np.full((n, n), MASK_NEG, dtype=dtype), k=1)
    return mask[None, None, :, :]
