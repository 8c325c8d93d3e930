"""Numpy implementations of the numeric inner loops.

These mirror the compiled versions in ``_ckernels`` and are used when the
extension is not built or ``LDPFUSE_PURE_PYTHON`` is set.  Both backends
take the same arguments and return the same values; see
:mod:`ldpfuse.kernels` for the dispatch.
"""

from __future__ import annotations

import numpy as np


def posterior_weighted_means(likes, var_tables, unbiased):
    """Per-user posterior, variance-optimal weights, and weighted value.

    Args:
        likes: (services, users, buckets) per-service likelihood rows.
        var_tables: (services, buckets) unbiased-output variance at each
            bucket midpoint.
        unbiased: (services, users) unbiased estimates from each report.

    Returns:
        (weighted values (users,), achieved per-user variance (users,),
        number of users whose posterior underflowed and was reset).
    """
    m, n, h = likes.shape
    post = likes[0].copy()
    for j in range(1, m):
        post *= likes[j]
    sums = post.sum(axis=1)
    degenerate = ~(sums > 0.0)
    n_degenerate = int(degenerate.sum())
    if n_degenerate:
        post[degenerate] = 1.0
        sums[degenerate] = float(h)
    post /= sums[:, None]
    variances = post @ var_tables.T  # (users, services)
    inv = 1.0 / variances
    inv_sum = inv.sum(axis=1)
    weights = inv / inv_sum[:, None]
    vprime = np.einsum("nm,mn->n", weights, unbiased)
    return vprime, 1.0 / inv_sum, n_degenerate


def posterior_weighted_means_log(likes, var_tables, unbiased):
    """Log-space variant of :func:`posterior_weighted_means`.

    Needed only when enough services multiply together that the straight
    product can underflow.
    """
    m, n, h = likes.shape
    with np.errstate(divide="ignore"):
        logpost = np.log(likes[0])
        for j in range(1, m):
            logpost += np.log(likes[j])
    peak = logpost.max(axis=1)
    degenerate = ~np.isfinite(peak)
    n_degenerate = int(degenerate.sum())
    if n_degenerate:
        logpost[degenerate] = 0.0
        peak[degenerate] = 0.0
    post = np.exp(logpost - peak[:, None])
    post /= post.sum(axis=1)[:, None]
    variances = post @ var_tables.T
    inv = 1.0 / variances
    inv_sum = inv.sum(axis=1)
    weights = inv / inv_sum[:, None]
    vprime = np.einsum("nm,mn->n", weights, unbiased)
    return vprime, 1.0 / inv_sum, n_degenerate


def em_fit(g, counts, d0, tol, max_iter, floor):
    """Multiplicative EM updates for a mixture over histogram buckets.

    Args:
        g: (groups, buckets) kernel matrix, rows strictly nonzero in sum.
        counts: (groups,) observation counts.
        d0: (buckets,) starting probabilities.
        tol: stop when the log-likelihood moves less than this.
        max_iter: cap on the number of updates.
        floor: smallest probability kept after each update (0 disables).

    Returns:
        (estimate, log-likelihood trace including the starting point,
        converged flag).
    """
    g = np.ascontiguousarray(g, dtype=float)
    gt = np.ascontiguousarray(g.T)
    counts = np.asarray(counts, dtype=float)
    d = np.array(d0, dtype=float)
    s = g @ d
    loglik = float(counts @ np.log(s))
    trace = [loglik]
    converged = False
    for _ in range(max_iter):
        r = counts / s
        d *= gt @ r
        d /= d.sum()
        if floor > 0.0:
            low = d < floor
            if low.any():
                d[low] = floor
                d /= d.sum()
        s = g @ d
        new = float(counts @ np.log(s))
        trace.append(new)
        if abs(new - loglik) < tol:
            converged = True
            break
        loglik = new
    return d, np.asarray(trace), converged
