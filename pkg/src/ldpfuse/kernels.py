"""Backend dispatch for the numeric inner loops.

The compiled extension is preferred when importable; the numpy fallback
gives identical results (up to float summation order) everywhere else.
Set ``LDPFUSE_PURE_PYTHON=1`` to force the fallback, e.g. to compare the
two with ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_numpy

if os.environ.get("LDPFUSE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_numpy
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_numpy

BACKEND = "numpy" if _impl is _kernels_numpy else "compiled"


def posterior_weighted_means(likes, var_tables, unbiased):
    """See :func:`ldpfuse._kernels_numpy.posterior_weighted_means`."""
    likes = np.ascontiguousarray(likes, dtype=np.float64)
    var_tables = np.ascontiguousarray(var_tables, dtype=np.float64)
    unbiased = np.ascontiguousarray(unbiased, dtype=np.float64)
    return _impl.posterior_weighted_means(likes, var_tables, unbiased)


def posterior_weighted_means_log(likes, var_tables, unbiased):
    """Log-space variant; always the numpy path (it is the rare branch)."""
    likes = np.ascontiguousarray(likes, dtype=np.float64)
    var_tables = np.ascontiguousarray(var_tables, dtype=np.float64)
    unbiased = np.ascontiguousarray(unbiased, dtype=np.float64)
    return _kernels_numpy.posterior_weighted_means_log(likes, var_tables, unbiased)


# Measured crossover for the EM loop: on big kernel matrices the numpy
# path rides BLAS matvecs and beats the scalar loop ~2x, while on small
# matrices the compiled loop wins (up to ~12x) because thousands of tiny
# iterations pay no per-step python overhead.
_EM_COMPILED_MAX_CELLS = 8192


def em_fit(g, counts, d0, tol, max_iter, floor):
    """See :func:`ldpfuse._kernels_numpy.em_fit`."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    d0 = np.ascontiguousarray(d0, dtype=np.float64)
    impl = _impl if g.size <= _EM_COMPILED_MAX_CELLS else _kernels_numpy
    return impl.em_fit(g, counts, d0, float(tol), int(max_iter), float(floor))
