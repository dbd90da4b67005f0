"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(f, param: Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f().data)
        flat[i] = orig - eps
        down = float(f().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(f, params, eps: float = 1e-5, floor: float = 1e-8, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params``. With ``max_entries``, only a random subset of each
    parameter's entries is probed.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        num = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            num[n] = (up - down) / (2.0 * eps)
        worst = max(worst, relative_error(a.reshape(-1)[idx], num, floor))
    return worst
