"""Central-difference verification of taped gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    analytic: np.ndarray | None = None,
) -> float:
    """Max relative error between the taped gradient of f at x and central
    finite differences.

    f must be a pure scalar-valued function of its tensor argument. The
    relative error per coordinate is |a - n| / (|a| + |n| + 1e-12); the
    maximum over coordinates is returned. Pass `analytic` to skip the taped
    evaluation (useful when the gradient was already computed as part of a
    larger graph).
    """
    if analytic is None:
        leaf = Tensor(x.data.copy(), requires_grad=True)
        with Tape() as tape:
            out = f(leaf)
        backward(tape, out)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    flat = x.data.reshape(-1)
    grad_flat = np.asarray(analytic).reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(Tensor(x.data)).item()
        flat[i] = orig - h
        f_minus = f(Tensor(x.data)).item()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = grad_flat[i]
        err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst
