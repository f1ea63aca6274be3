"""Throughput comparison of the JIT kernels against their numpy fallbacks.

Run:  python benchmarks/bench_kernels.py
The env flag FEDSIM_NO_NUMBA only affects which path the package itself
dispatches to; this script always times both implementations directly.
"""

from __future__ import annotations

import time

import numpy as np

from fedsim.kernels import _numpy as knp

try:
    from fedsim.kernels import _numba as knb
except ImportError:
    knb = None


def _time(fn, *args, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_energy():
    print("pairwise_energy (loss + gradient)")
    print(f"{'n x d':>12s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    rng = np.random.default_rng(0)
    for n, d in [(32, 16), (128, 16), (512, 32), (2048, 32)]:
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        t_np = _time(knp.pairwise_energy, z, 1e-4)
        if knb is None:
            print(f"{n:>7d}x{d:<4d} {t_np*1e3:>9.2f}ms {'n/a':>10s}")
            continue
        knb.pairwise_energy(z, 1e-4)  # compile outside the timer
        t_nb = _time(knb.pairwise_energy, z, 1e-4)
        print(f"{n:>7d}x{d:<4d} {t_np*1e3:>9.2f}ms {t_nb*1e3:>8.2f}ms {t_np/t_nb:>7.1f}x")


def bench_jacobi():
    print("\njacobi_singular_values")
    print(f"{'shape':>12s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    rng = np.random.default_rng(1)
    for shape in [(10, 16), (32, 32), (64, 64), (128, 64)]:
        m = rng.standard_normal(shape)
        t_np = _time(knp.jacobi_singular_values, m)
        if knb is None:
            print(f"{str(shape):>12s} {t_np*1e3:>9.2f}ms {'n/a':>10s}")
            continue
        knb.jacobi_singular_values(m)
        t_nb = _time(knb.jacobi_singular_values, m)
        print(f"{str(shape):>12s} {t_np*1e3:>9.2f}ms {t_nb*1e3:>8.2f}ms {t_np/t_nb:>7.1f}x")


if __name__ == "__main__":
    bench_energy()
    bench_jacobi()
