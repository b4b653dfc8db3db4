"""Dense float64 kernels: matrix-vector products and the elementwise functions.

Matrices and vectors are plain C-contiguous (row-major) ``numpy.float64`` arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float64

Matrix = np.ndarray
Vector = np.ndarray


def as_matrix(data) -> Matrix:
    m = np.ascontiguousarray(data, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def as_vector(data) -> Vector:
    v = np.ascontiguousarray(data, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def matvec(m: Matrix, v: Vector) -> Vector:
    """Return ``m @ v``, raising :class:`ShapeError` naming both shapes on mismatch."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(
            f"matvec: matrix {m.shape[0]}x{m.shape[1]} incompatible with vector of length {v.shape[0]}"
        )
    return m @ v


def sigmoid(x):
    """Logistic function, evaluated on the branch that never exponentiates a positive number."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh_fn(x):
    out = np.tanh(np.asarray(x, dtype=DTYPE))
    return out if out.ndim else float(out)


def relu(x):
    out = np.maximum(np.asarray(x, dtype=DTYPE), 0.0)
    return out if out.ndim else float(out)


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction; works on vectors and batches."""
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise ShapeError(f"softmax needs at least one entry, got shape {v.shape}")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)
