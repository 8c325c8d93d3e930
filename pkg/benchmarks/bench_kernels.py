"""Time the compiled inner loops against the numpy fallback.

Runs the two hot kernels on workloads shaped like a real experiment
(per-user posterior weighting at n=100k and an EM fit on a few thousand
report groups), checks both backends agree, and prints a small table.

Usage:
    python benchmarks/bench_kernels.py [--users N] [--groups N] [--repeat K]
"""
import argparse
import time

import numpy as np

from ldpfuse import _kernels_numpy

try:
    from ldpfuse import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, result


def bench_posterior(users, repeat):
    m, h = 4, 64
    rng = np.random.default_rng(7)
    likes = rng.random((m, users, h)) + 1e-3
    var_tables = rng.uniform(0.5, 20.0, (m, h))
    unbiased = rng.normal(0.0, 2.0, (m, users))
    args = (likes, var_tables, unbiased)

    t_np, (v_np, s_np, _) = _time(_kernels_numpy.posterior_weighted_means, args, repeat)
    row = [f"posterior weighting ({users} users)", t_np, None]
    if _ckernels is not None:
        t_c, (v_c, s_c, _) = _time(_ckernels.posterior_weighted_means, args, repeat)
        np.testing.assert_allclose(v_c, v_np, atol=1e-10)
        np.testing.assert_allclose(s_c, s_np, atol=1e-10)
        row[2] = t_c
    return row


def bench_em(groups, l, iters, repeat):
    rng = np.random.default_rng(11)
    g = rng.random((groups, l)) + 1e-4
    counts = rng.integers(1, 60, groups).astype(float)
    d0 = np.full(l, 1.0 / l)
    args = (g, counts, d0, 0.0, iters, 1e-12)

    t_np, (d_np, _, _) = _time(_kernels_numpy.em_fit, args, repeat)
    row = [f"EM fit ({groups} groups x {l} buckets, {iters} steps)", t_np, None]
    if _ckernels is not None:
        t_c, (d_c, _, _) = _time(_ckernels.em_fit, args, repeat)
        np.testing.assert_allclose(d_c, d_np, atol=1e-10)
        row[2] = t_c
    return row


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--users", type=int, default=100_000)
    parser.add_argument("--groups", type=int, default=4_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if _ckernels is None:
        print("compiled extension not importable; timing the numpy fallback only")

    # one workload from each regime: the library routes EM by kernel size,
    # so both rows matter (see _EM_COMPILED_MAX_CELLS in ldpfuse.kernels)
    rows = [
        bench_posterior(args.users, args.repeat),
        bench_em(args.groups, 64, 400, args.repeat),
        bench_em(120, 8, 20_000, args.repeat),
    ]
    print(f"{'workload':<48} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, t_np, t_c in rows:
        if t_c is None:
            print(f"{name:<48} {t_np * 1e3:>8.1f}ms {'-':>10} {'-':>8}")
        else:
            print(f"{name:<48} {t_np * 1e3:>8.1f}ms {t_c * 1e3:>8.1f}ms {t_np / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
