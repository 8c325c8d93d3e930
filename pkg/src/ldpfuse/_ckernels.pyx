# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the numpy kernels in ``_kernels_numpy``.

Same signatures, same results up to float summation order.  The per-user
posterior loop and the EM update loop are the two places the package
spends nearly all of its time at realistic population sizes.
"""

import numpy as np

from libc.math cimport fabs, log


def posterior_weighted_means(double[:, :, ::1] likes,
                             double[:, ::1] var_tables,
                             double[:, ::1] unbiased):
    cdef Py_ssize_t m = likes.shape[0]
    cdef Py_ssize_t n = likes.shape[1]
    cdef Py_ssize_t h = likes.shape[2]
    vprime_arr = np.empty(n)
    minvar_arr = np.empty(n)
    post_arr = np.empty(h)
    inv_arr = np.empty(m)
    cdef double[::1] vprime = vprime_arr
    cdef double[::1] minvar = minvar_arr
    cdef double[::1] post = post_arr
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t i, j, k
    cdef double s, variance, inv_sum, acc
    cdef long n_degenerate = 0

    for i in range(n):
        for k in range(h):
            post[k] = likes[0, i, k]
        for j in range(1, m):
            for k in range(h):
                post[k] = post[k] * likes[j, i, k]
        s = 0.0
        for k in range(h):
            s += post[k]
        if not s > 0.0:
            n_degenerate += 1
            for k in range(h):
                post[k] = 1.0
            s = <double> h
        inv_sum = 0.0
        for j in range(m):
            variance = 0.0
            for k in range(h):
                variance += post[k] * var_tables[j, k]
            variance /= s
            inv[j] = 1.0 / variance
            inv_sum += inv[j]
        acc = 0.0
        for j in range(m):
            acc += inv[j] / inv_sum * unbiased[j, i]
        vprime[i] = acc
        minvar[i] = 1.0 / inv_sum
    return vprime_arr, minvar_arr, int(n_degenerate)


def em_fit(double[:, ::1] g, double[::1] counts, double[::1] d0,
           double tol, long max_iter, double floor):
    cdef Py_ssize_t n_groups = g.shape[0]
    cdef Py_ssize_t l = g.shape[1]
    d_arr = np.array(d0, dtype=np.float64, copy=True)
    s_arr = np.empty(n_groups)
    p_arr = np.empty(l)
    cdef double[::1] d = d_arr
    cdef double[::1] s = s_arr
    cdef double[::1] p = p_arr
    cdef Py_ssize_t k, t
    cdef long it
    cdef double acc, loglik, prev, ratio, total
    cdef bint converged = False
    trace = []

    loglik = 0.0
    for k in range(n_groups):
        acc = 0.0
        for t in range(l):
            acc += g[k, t] * d[t]
        s[k] = acc
        loglik += counts[k] * log(acc)
    trace.append(loglik)
    prev = loglik

    for it in range(max_iter):
        for t in range(l):
            p[t] = 0.0
        for k in range(n_groups):
            ratio = counts[k] / s[k]
            for t in range(l):
                p[t] += g[k, t] * ratio
        total = 0.0
        for t in range(l):
            d[t] = d[t] * p[t]
            total += d[t]
        for t in range(l):
            d[t] = d[t] / total
        if floor > 0.0:
            total = 0.0
            for t in range(l):
                if d[t] < floor:
                    d[t] = floor
                total += d[t]
            for t in range(l):
                d[t] = d[t] / total
        loglik = 0.0
        for k in range(n_groups):
            acc = 0.0
            for t in range(l):
                acc += g[k, t] * d[t]
            s[k] = acc
            loglik += counts[k] * log(acc)
        trace.append(loglik)
        if fabs(loglik - prev) < tol:
            converged = True
            break
        prev = loglik
    return d_arr, np.asarray(trace), bool(converged)
