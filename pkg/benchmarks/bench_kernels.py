"""Benchmark the compiled kernels against the pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from robayes import _core_py

try:
    from robayes import _core

    BACKENDS = {"compiled": _core, "python": _core_py}
except ImportError:
    BACKENDS = {"python": _core_py}


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_jacobi(repeats):
    print("cyclic Jacobi eigendecomposition")
    for d in (8, 16, 32, 64, 160):
        gen = np.random.default_rng(0)
        a = gen.standard_normal((d, d))
        a = (a + a.T) / 2
        row = f"  d={d:4d}:"
        times = {}
        for name, mod in BACKENDS.items():
            times[name] = _time(lambda m=mod: m.jacobi_eigh(a), repeats)
            row += f"  {name} {times[name] * 1e3:9.2f} ms"
        if len(times) == 2:
            row += f"  speedup {times['python'] / times['compiled']:6.1f}x"
        print(row)


def bench_filter(repeats):
    print("mean filter (one corrupted cluster)")
    for n, d in ((400, 20), (2000, 2), (2000, 20)):
        gen = np.random.default_rng(1)
        x = gen.standard_normal((n, d))
        x[: n // 20] += 6.0
        alpha0 = 0.5
        budget = 0.2 * n
        row = f"  n={n:5d} d={d:3d}:"
        times = {}
        for name, mod in BACKENDS.items():
            times[name] = _time(lambda m=mod: m.mean_filter(x, alpha0, budget, n), repeats)
            row += f"  {name} {times[name] * 1e3:9.2f} ms"
        if len(times) == 2:
            row += f"  speedup {times['python'] / times['compiled']:6.1f}x"
        print(row)


def check_agreement():
    gen = np.random.default_rng(2)
    a = gen.standard_normal((24, 24))
    a = (a + a.T) / 2
    if len(BACKENDS) < 2:
        print("compiled backend unavailable; skipping agreement check")
        return
    w1, v1, _, _ = BACKENDS["compiled"].jacobi_eigh(a)
    w2, v2, _, _ = BACKENDS["python"].jacobi_eigh(a)
    print(f"backend eigenvalue agreement: {np.abs(w1 - w2).max():.2e}")
    x = gen.standard_normal((300, 5))
    x[:10] += 8.0
    a1 = BACKENDS["compiled"].mean_filter(x, 0.4, 90.0, 300)[0]
    a2 = BACKENDS["python"].mean_filter(x, 0.4, 90.0, 300)[0]
    print(f"backend filter weight agreement: {np.abs(a1 - a2).max():.2e}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    print(f"backends available: {', '.join(BACKENDS)}")
    check_agreement()
    bench_jacobi(args.repeats)
    bench_filter(args.repeats)


if __name__ == "__main__":
    main()
