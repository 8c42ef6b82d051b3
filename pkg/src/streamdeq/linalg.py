"""Dense float64 helpers shared by every other module.

Vectors and matrices are plain numpy arrays (1-D and 2-D, float64). The
``as_vector`` / ``as_matrix`` constructors validate shape and finiteness and
return read-only arrays, so values handed around the package are immutable.
"""

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True, order="C")
    arr.flags.writeable = False
    return arr


def as_vector(values, name="vector"):
    """Validate ``values`` as a non-empty finite 1-D float64 vector (read-only copy)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return _frozen(v)


def as_matrix(values, name="matrix"):
    """Validate ``values`` as a finite 2-D float64 matrix with positive dims."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} must have positive dimensions, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return _frozen(m)


def matvec(m, v):
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(
            f"cannot multiply matrix of shape {m.shape} by vector of shape {v.shape}"
        )
    return m @ v


def sq_distance(a, b):
    """Squared Euclidean distance ``sum((a - b)**2)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def l2_norm(v):
    v = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(v @ v))


def spectral_norm_estimate(m, iters=100, seed=0, backend=None):
    """Largest singular value of ``m`` by power iteration on ``m.T @ m``.

    The start vector is drawn from ``numpy.random.default_rng(seed)``, so the
    estimate is reproducible. The estimate never exceeds the true value by
    more than rounding; it returns 0.0 for the zero matrix.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.any(m):
        return 0.0
    v0 = np.random.default_rng(seed).standard_normal(m.shape[1])
    return float(_kernels.get_kernels(backend).power(m, v0, int(iters)))


def spectral_norm(m):
    """Exact largest singular value (LAPACK SVD)."""
    return float(np.linalg.norm(np.asarray(m, dtype=np.float64), ord=2))


def frobenius_norm(m):
    return float(np.linalg.norm(np.asarray(m, dtype=np.float64)))
