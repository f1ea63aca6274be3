"""Deterministic dense numeric primitives.

All exported operations are pure, work in float64, and reject non-finite
input rather than propagating NaNs. Matrices are plain 2-D float64 ndarrays.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def _as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got ndim={a.ndim}")
    return a


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction; accepts a vector or matrix."""
    a = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("softmax: non-finite input")
    shifted = a - np.max(a, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values, descending, via one-sided Jacobi iteration."""
    a = _as_matrix(m)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("singular_values: empty matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("singular_values: non-finite entries")
    return kernels.jacobi_singular_values(a)


def column_variance(m: np.ndarray, estimator: str = "population") -> np.ndarray:
    """Per-column variance under the named estimator.

    ``population`` divides by n (default everywhere in this package, so the
    variance floor and the batch statistic share one convention); ``sample``
    divides by n-1 and needs at least two rows.
    """
    a = _as_matrix(m)
    if estimator == "population":
        if a.shape[0] < 1:
            raise ValueError("column_variance: need at least one row")
        ddof = 0
    elif estimator == "sample":
        if a.shape[0] < 2:
            raise ValueError("column_variance: sample estimator needs at least two rows")
        ddof = 1
    else:
        raise ValueError(f"column_variance: unknown estimator {estimator!r}")
    return np.var(a, axis=0, ddof=ddof)
