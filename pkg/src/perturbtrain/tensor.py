"""Dense float64 linear algebra with strict shapes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 (C order, so the
flat buffer is row-major). Nothing here broadcasts: every shape mismatch is a
:class:`DimensionError`.
"""

import numpy as np

from .errors import DimensionError, NonFiniteError


def as_tensor(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    _check_finite(arr, "as_tensor")
    return arr


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    _check_finite(out, "matmul")
    return out


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * b
    _check_finite(out, "hadamard")
    return out


def frobenius_inner(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frobenius_inner: shapes {a.shape} and {b.shape} differ")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(a) -> float:
    """Square root of the sum of squared entries (0 for an empty tensor)."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.dot(a.ravel(), a.ravel())))


def outer(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"outer: expected two vectors, got {u.shape} and {v.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.multiply.outer(u, v)
    _check_finite(out, "outer")
    return out


def global_norm(arrays) -> float:
    """L2 norm over a list of arrays treated as one flattened vector."""
    total = 0.0
    for a in arrays:
        flat = np.asarray(a, dtype=np.float64).ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))
