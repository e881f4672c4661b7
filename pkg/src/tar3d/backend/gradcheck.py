"""Finite-difference verification of analytic gradients (64-bit only)."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor; x must be float64 (finite differences
    are meaningless in float32). Error per coordinate is
    |analytic - central| / max(1e-8, |analytic| + |central|).
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 input tensor")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    out.backward()
    analytic = x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x).data)
        flat[i] = orig - eps
        lo = float(f(x).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)

    a = analytic.reshape(-1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(np.max(np.abs(a - numeric) / denom))


def grad_check_params(f, params, eps: float = 1e-5) -> float:
    """grad_check over a list of float64 Parameters against a shared scalar f().

    f takes no arguments and reads the parameters; returns the worst relative
    error across every coordinate of every parameter.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check_params: {getattr(p, 'name', '?')} is not float64")
        p.grad = None
    out = f()
    out.backward()
    worst = 0.0
    for p in params:
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(1e-8, abs(analytic[i]) + abs(numeric))
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
