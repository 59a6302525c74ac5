"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def finite_diff_check(
    f,
    tensors,
    step: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` is called with no arguments and must return a scalar Tensor built
    from ``tensors`` (a Tensor or list of Tensors with requires_grad set).
    Returns the worst relative error over all checked elements, where the
    relative error of analytic a vs numeric n is |a - n| / max(|a|, |n|, 1e-6).

    ``sample`` limits the check to that many randomly chosen elements per
    tensor (seeded), which keeps whole-model checks tractable.
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("finite_diff_check requires float64 tensors")
        t.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ValueError("f must return a scalar")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idx = rng.choice(flat.size, size=sample, replace=False)
        a_flat = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                f_plus = f().item()
                flat[i] = orig - step
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
