"""Hot-kernel dispatch.

The JIT path is the default; set ``FEDSIM_NO_NUMBA=1`` (or run without numba
installed) to select the pure-numpy fallback. Both paths implement identical
contracts; ``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import os

from . import _numpy

NUMBA_ENABLED = False

if not os.environ.get("FEDSIM_NO_NUMBA"):
    try:
        from . import _numba

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    pairwise_energy = _numba.pairwise_energy
    jacobi_singular_values = _numba.jacobi_singular_values
else:
    pairwise_energy = _numpy.pairwise_energy
    jacobi_singular_values = _numpy.jacobi_singular_values

__all__ = ["NUMBA_ENABLED", "pairwise_energy", "jacobi_singular_values"]
