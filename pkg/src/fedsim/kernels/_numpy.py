"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path (``FEDSIM_NO_NUMBA=1``) and the ground truth the
JIT variants are tested against.
"""

from __future__ import annotations

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


def pairwise_energy(z: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Inverse-angular-distance energy of unit rows, diagonal excluded.

    loss = (1/n^2) sum_{i != j} 1 / (1 - z_i.z_j + eps)
    dloss/dz_i = (2/n^2) sum_{j != i} z_j / (1 - z_i.z_j + eps)^2
    """
    n = z.shape[0]
    sim = z @ z.T
    denom = 1.0 - sim + eps
    inv = 1.0 / denom
    np.fill_diagonal(inv, 0.0)
    loss = float(inv.sum()) / (n * n)
    w = (2.0 / (n * n)) * inv * inv
    grad = w @ z
    return loss, grad


def jacobi_singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values by one-sided Jacobi rotations, descending.

    Columns are pairwise orthogonalized until the off-diagonal mass of the
    Gram matrix falls below JACOBI_TOL relative to its diagonal mass, or
    JACOBI_MAX_SWEEPS sweeps elapse. Singular values are the final column
    norms; rotations preserve the Frobenius norm.
    """
    if a.shape[0] < a.shape[1]:
        a = a.T
    a = np.array(a, dtype=np.float64, order="F", copy=True)
    n = a.shape[1]
    for _ in range(JACOBI_MAX_SWEEPS):
        off_sq = 0.0
        diag_sq = 0.0
        for p in range(n):
            diag_sq += float(a[:, p] @ a[:, p]) ** 2
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[:, p] @ a[:, q])
                off_sq += apq * apq
                if apq == 0.0:
                    continue
                app = float(a[:, p] @ a[:, p])
                aqq = float(a[:, q] @ a[:, q])
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
        if off_sq <= (JACOBI_TOL ** 2) * diag_sq or diag_sq == 0.0:
            break
    sv = np.sqrt(np.sum(a * a, axis=0))
    sv.sort()
    return sv[::-1].copy()
