"""JIT-compiled hot kernels.

Same contracts as kernels._numpy; loops are written out so numba can fuse
them. No prange: kernels stay single-threaded so results are independent of
worker-thread settings.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._numpy import JACOBI_MAX_SWEEPS, JACOBI_TOL


@njit(cache=True)
def pairwise_energy(z, eps):  # pragma: no cover - exercised via dispatch tests
    n, d = z.shape
    inv_n2 = 1.0 / (n * n)
    loss = 0.0
    grad = np.zeros((n, d))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                s += z[i, k] * z[j, k]
            inv = 1.0 / (1.0 - s + eps)
            loss += 2.0 * inv
            w = 2.0 * inv * inv * inv_n2
            for k in range(d):
                grad[i, k] += w * z[j, k]
                grad[j, k] += w * z[i, k]
    return loss * inv_n2, grad


@njit(cache=True)
def _jacobi_inner(a):  # pragma: no cover - exercised via dispatch tests
    m, n = a.shape
    for _ in range(JACOBI_MAX_SWEEPS):
        off_sq = 0.0
        diag_sq = 0.0
        for p in range(n):
            d = 0.0
            for r in range(m):
                d += a[r, p] * a[r, p]
            diag_sq += d * d
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = 0.0
                app = 0.0
                aqq = 0.0
                for r in range(m):
                    apq += a[r, p] * a[r, q]
                    app += a[r, p] * a[r, p]
                    aqq += a[r, q] * a[r, q]
                off_sq += apq * apq
                if apq == 0.0:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                if tau != 0.0:
                    t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau))
                else:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                for r in range(m):
                    ap = a[r, p]
                    a[r, p] = c * ap - s * a[r, q]
                    a[r, q] = s * ap + c * a[r, q]
        if off_sq <= (JACOBI_TOL ** 2) * diag_sq or diag_sq == 0.0:
            break
    sv = np.empty(n)
    for p in range(n):
        d = 0.0
        for r in range(m):
            d += a[r, p] * a[r, p]
        sv[p] = np.sqrt(d)
    return np.sort(sv)[::-1].copy()


def jacobi_singular_values(a: np.ndarray) -> np.ndarray:
    if a.shape[0] < a.shape[1]:
        a = a.T
    return _jacobi_inner(np.ascontiguousarray(a, dtype=np.float64).copy())
