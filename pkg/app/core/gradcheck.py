"""
Finite-difference verification of analytic gradients
File: app/core/gradcheck.py
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from app.core.exceptions import ContractError
from app.core.tensor import Tape, Tensor, backward, no_grad


def numerical_gradient(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` around ``x`` (x.data is restored afterwards)"""
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(x).item()
            flat[i] = orig - step
            f_minus = f(x).item()
            flat[i] = orig
            out[i] = (f_plus - f_minus) / (2.0 * step)
    return numeric


def analytic_gradient(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    if not x.requires_grad:
        raise ContractError("grad_check: x must require a gradient")
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    backward(loss, tape, params=[x])
    grad = x.grad.copy()
    x.grad = None
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """
    Max elementwise relative error between the tape gradient of ``f`` at ``x``
    and central differences, using max(|a|, |n|, 1e-8) as denominator.
    """
    if step <= 0:
        raise ContractError(f"grad_check: step must be positive, got {step}")
    analytic = analytic_gradient(f, x)
    numeric = numerical_gradient(f, x, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
