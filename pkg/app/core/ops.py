"""
Differentiable primitives
File: app/core/ops.py

Each primitive computes its forward value with numpy and records the
vector-Jacobian product on the active tape. Broadcasting is limited to a row
vector over a matrix.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import DimensionError, IndexRangeError, NumericError
from app.core.tensor import Tensor, record


_GELU_C = math.sqrt(2.0 / math.pi)


def _is_row_broadcast(a: Tensor, b: Tensor) -> bool:
    if a.ndim != 2:
        return False
    if b.ndim == 1:
        return b.shape[0] == a.shape[1]
    return b.ndim == 2 and b.shape[0] == 1 and b.shape[1] == a.shape[1] and a.shape[0] != 1


def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    """Returns True when ``b`` broadcasts as a row vector over ``a``"""
    if a.shape == b.shape:
        return False
    if _is_row_broadcast(a, b):
        return True
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_rows(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return g.sum(axis=0).reshape(shape)


# ==================== ELEMENTWISE ====================

def add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary(a, b, "add")

    def _backward(g):
        return g, (_reduce_rows(g, b.shape) if bcast else g)

    return record(a.data + b.data, (a, b), _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary(a, b, "sub")

    def _backward(g):
        return g, -(_reduce_rows(g, b.shape) if bcast else g)

    return record(a.data - b.data, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary(a, b, "mul")
    a_data, b_data = a.data, b.data

    def _backward(g):
        gb = g * a_data
        return g * b_data, (_reduce_rows(gb, b.shape) if bcast else gb)

    return record(a_data * b_data, (a, b), _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record(a.data * factor, (a,), lambda g: (g * factor,))


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU"""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def _backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t ** 2) * d_inner),)

    return record(out, (x,), _backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return record(t, (x,), lambda g: (g * (1.0 - t ** 2),))


# ==================== REDUCTIONS ====================

def sum(a: Tensor) -> Tensor:  # noqa: A001
    shape = a.shape
    return record(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return record(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def mean_rows(a: Tensor) -> Tensor:
    """Column mean of an r×c matrix as a 1×c row"""
    if a.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean_rows: expected a non-empty matrix, got {a.shape}")
    r = a.shape[0]
    return record(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / r, r, axis=0),))


# ==================== LINEAR ALGEBRA ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g):
        return g @ b_data.T, a_data.T @ g

    return record(a_data @ b_data, (a, b), _backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}")
    return record(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    src = a.shape
    return record(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(src),))


# ==================== SLICING / JOINING ====================

def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [p for p in parts if p.shape[0] > 0]
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1 or any(p.ndim != 2 for p in parts):
        raise DimensionError(f"concat_rows: width mismatch {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def _backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return record(np.concatenate([p.data for p in parts], axis=0), tuple(parts), _backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.shape[0] for p in parts}
    if len(heights) != 1 or any(p.ndim != 2 for p in parts):
        raise DimensionError(f"concat_cols: height mismatch {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def _backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), _backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return record(a.data[start:stop].copy(), (a,), _backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return record(a.data[:, start:stop].copy(), (a,), _backward)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of ``table`` in the order of ``indices``"""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexRangeError(f"gather_rows: index out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def _backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return record(table.data[idx].copy(), (table,), _backward)


# ==================== NORMALIZATION / ATTENTION ====================

def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax_rows: expected r×c with c ≥ 1, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record(y, (x,), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise NumericError(f"layer_norm: eps must be positive, got {eps}")
    if x.ndim != 2 or gain.shape[-1] != x.shape[1] or bias.shape[-1] != x.shape[1]:
        raise DimensionError(f"layer_norm: {x.shape} with gain {gain.shape} and bias {bias.shape}")
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    g_row = gain.data.reshape(1, c)
    out = xhat * g_row + bias.data.reshape(1, c)

    def _backward(g):
        dxhat = g * g_row
        dx = inv_std / c * (
            c * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0).reshape(gain.shape)
        dbias = g.sum(axis=0).reshape(bias.shape)
        return dx, dgain, dbias

    return record(out, (x, gain, bias), _backward)


def attention(q: Tensor, k: Tensor, v: Tensor, d_k: int) -> Tensor:
    """Softmax(q·kᵀ/√d_k)·v"""
    if d_k <= 0:
        raise DimensionError(f"attention: d_k must be positive, got {d_k}")
    if q.shape[1] != k.shape[1] or k.shape[1] != d_k:
        raise DimensionError(f"attention: q {q.shape} and k {k.shape} must share last axis {d_k}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention: k {k.shape} and v {v.shape} must share row count")
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    return matmul(softmax_rows(logits), v)


# ==================== LOSSES ====================

def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """−log softmax(logits)[target] for a single K-vector (or 1×K row)"""
    flat = logits.data.reshape(-1)
    k = flat.shape[0]
    if k < 2:
        raise DimensionError(f"cross_entropy: need at least 2 classes, got {k}")
    if not 0 <= int(target_index) < k:
        raise IndexRangeError(f"cross_entropy: target {target_index} outside [0, {k})")
    if not np.all(np.isfinite(flat)):
        raise NumericError("cross_entropy: non-finite logits")
    t = int(target_index)
    shifted = flat - flat.max()
    log_z = math.log(np.exp(shifted).sum())
    loss = log_z - shifted[t]
    shape = logits.shape

    def _backward(g):
        probs = np.exp(shifted - log_z)
        probs[t] -= 1.0
        return ((float(g) * probs).reshape(shape),)

    return record(np.array(loss), (logits,), _backward)


def weighted_sq_distance(theta: Tensor, anchor: np.ndarray, weight: np.ndarray) -> Tensor:
    """Σ weight·(θ − anchor)² against constant anchor/weight arrays"""
    if theta.shape != anchor.shape or theta.shape != weight.shape:
        raise DimensionError(f"weighted_sq_distance: {theta.shape} vs {anchor.shape} / {weight.shape}")
    diff = theta.data - anchor
    return record(np.array((weight * diff ** 2).sum()), (theta,), lambda g: (2.0 * float(g) * weight * diff,))


def stack_scalars(values: Sequence[Tensor], weights: Optional[Sequence[float]] = None) -> Tensor:
    """Weighted sum of scalar tensors as one scalar"""
    if not values:
        raise DimensionError("stack_scalars: nothing to combine")
    w = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = float(np.dot(w, [v.item() for v in values]))

    def _backward(g):
        return tuple(np.full(v.shape, float(g) * w[i]) for i, v in enumerate(values))

    return record(np.array(total), tuple(values), _backward)
