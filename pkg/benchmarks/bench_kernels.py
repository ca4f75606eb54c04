#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the NumPy fallback.

Times the two hot kernels on workloads shaped like a production branch
sweep (a 9^3 momentum sweep against a 16^3 double-cover quadrature grid):
batched resolvent moment sums and the bracketed bisection/Newton root
scan.  Run after building the extension:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fockspec import _kernels_py

try:
    from fockspec import _kernels

    HAVE_EXT = True
except ImportError:
    _kernels = None
    HAVE_EXT = False


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    R, N = 729, 4096
    rows = 0.5 + rng.random((R, N)) * 11.5
    fw = rng.random(N) * 1e-3
    z = -0.5 - rng.random(R)
    lo = np.full(R, -60.0)
    hi = rows.min(axis=1) - 1e-6
    a = np.ones(R)

    cases = [
        ("moment_sums order 1", lambda k: k.moment_sums(rows, fw, z, 1)),
        ("moment_sums order 2", lambda k: k.moment_sums(rows, fw, z, 2)),
        ("roots_in_bracket", lambda k: k.roots_in_bracket(rows, fw, a, 0.0, lo, hi)),
    ]
    print(f"workload: R={R} sweep rows, N={N} quadrature nodes")
    print(f"{'kernel':24s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_py = timeit(lambda: call(_kernels_py))
        if HAVE_EXT:
            t_cy = timeit(lambda: call(_kernels))
            ref = np.atleast_1d(call(_kernels_py))
            got = np.atleast_1d(call(_kernels))
            assert np.allclose(ref, got, rtol=1e-12, atol=1e-12), name
            print(f"{name:24s} {t_py*1e3:9.2f}ms {t_cy*1e3:9.2f}ms {t_py/t_cy:7.2f}x")
        else:
            print(f"{name:24s} {t_py*1e3:9.2f}ms {'n/a':>10s} {'n/a':>8s}")
    if not HAVE_EXT:
        print("compiled backend unavailable; build with `pip install -e .`")


if __name__ == "__main__":
    main()
