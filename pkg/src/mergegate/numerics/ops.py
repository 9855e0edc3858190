"""Differentiable primitives beyond basic arithmetic.

`softmax_one` is the attention normalizer used throughout the model: a
softmax with an extra constant 1 in the denominator, so the normalized mass
can fall below one (and vanish entirely when every logit is very negative).
Unlike the standard softmax it is *not* shift invariant, which the
stabilization below has to respect: subtracting m rescales the implicit
constant term by exp(-m), so that term is carried explicitly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, expit, gammaln

from .tensor import Tensor, apply_op


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    keep = x.data > 0
    return apply_op(out, (x,), lambda g: (g * keep,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return apply_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    out = np.maximum(x.data, floor)
    above = x.data > floor
    return apply_op(out, (x,), lambda g: (g * above,))


def softmax_one(logits: Tensor, axis: int = -1) -> Tensor:
    """exp(x_i) / (1 + sum_j exp(x_j)) along `axis`.

    Stabilized by subtracting m = max(0, max_j x_j); the implicit 1 in the
    denominator becomes exp(-m), which keeps the result exact while making
    every exponent nonpositive.
    """
    if not np.isfinite(logits.data).all():
        raise ValueError("softmax_one: logits contain non-finite values")
    m = np.maximum(logits.data.max(axis=axis, keepdims=True), 0.0)
    e = np.exp(logits.data - m)
    denom = np.exp(-m) + e.sum(axis=axis, keepdims=True)
    s = e / denom

    def vjp(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return apply_op(s, (logits,), vjp)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis."""
    if gain.data.shape != (x.data.shape[-1],):
        raise ValueError(
            f"rms_norm: gain shape {gain.data.shape} does not match last extent {x.data.shape[-1]}"
        )
    d = x.data.shape[-1]
    ms = np.mean(np.square(x.data), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    normed = x.data * inv
    out = normed * gain.data

    def vjp(g):
        gx = ggain = None
        gg = g * gain.data
        if x.requires_grad:
            inner = (gg * x.data).sum(axis=-1, keepdims=True)
            gx = inv * gg - x.data * (inv**3) * inner / d
        if gain.requires_grad:
            ggain = (g * normed).reshape(-1, d).sum(axis=0)
        return gx, ggain

    return apply_op(out, (x, gain), vjp)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_id.

    Uses the standard softmax over the final (vocabulary) axis; `targets`
    holds integer ids with the same shape as the leading logits axes.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError("cross_entropy: target shape must match logits batch shape")
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    ids = targets.reshape(-1)
    valid = ids != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is ignored, mean undefined")

    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    z = e.sum(axis=-1, keepdims=True)
    log_probs = (flat - m) - np.log(z)
    picked = log_probs[np.arange(flat.shape[0]), np.where(valid, ids, 0)]
    loss = -(picked * valid).sum() / n_valid

    def vjp(g):
        soft = e / z
        soft[np.arange(flat.shape[0]), np.where(valid, ids, 0)] -= 1.0
        soft *= (valid / n_valid)[:, None]
        return (float(g) * soft.reshape(logits.data.shape),)

    return apply_op(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from `table`; gradients scatter-add back into the table."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return apply_op(out, (table,), vjp)


def gather_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[b, j, ...] = x[b, idx[b, j], ...] for per-batch position indices."""
    idx = np.asarray(idx)
    batch = np.arange(x.data.shape[0])[:, None]
    out = x.data[batch, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch, idx), g)
        return (gx,)

    return apply_op(out, (x,), vjp)


def select_index(x: Tensor, axis: int, index: int) -> Tensor:
    """Slice one index off `axis` (keeping the remaining axes)."""
    out = np.take(x.data, index, axis=axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return apply_op(out, (x,), vjp)


def lgamma(x: Tensor) -> Tensor:
    out = gammaln(x.data)
    return apply_op(out, (x,), lambda g: (g * digamma(x.data),))


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward the discrete `hard` values, backprop as identity into `soft`."""
    hard = np.asarray(hard, dtype=soft.dtype)
    if hard.shape != soft.data.shape:
        raise ValueError("straight_through: hard/soft shapes differ")
    return apply_op(hard, (soft,), lambda g: (g,))
