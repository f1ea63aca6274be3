"""Shared test oracles: central finite differences and gradient comparison."""

from __future__ import annotations

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def grad_error(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rel_tol: float = 1e-5,
    abs_floor: float = 1e-8,
) -> float:
    """Worst-case gradient discrepancy, normalized so < rel_tol means pass.

    Entries with magnitude >= abs_floor score their relative error; smaller
    entries score (|a - n| / abs_floor) * rel_tol, i.e. they pass iff the
    absolute error stays below abs_floor.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    big = scale >= abs_floor
    score = 0.0
    if np.any(big):
        score = float(np.max(err[big] / scale[big]))
    if np.any(~big):
        score = max(score, float(np.max(err[~big])) / abs_floor * rel_tol)
    return score
