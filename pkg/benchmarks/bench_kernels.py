#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from gmclab import _kernels_np
from gmclab.kernel import build_mollifier
from gmclab.noise import stencil

try:
    from gmclab import _kernels_nb
except ImportError:  # numba not installed
    _kernels_nb = None


def cases(d):
    k = build_mollifier(d)
    dx = 1 / 16 if d == 1 else 1 / 8
    off = stencil(d, dx)
    pos = _kernels_np.brownian_paths(np.uint64(11), 500, 100, d, 0.1, np.zeros(d))
    scale = 0.01 / np.sqrt(0.01 * dx ** d) * dx ** d
    steps = np.arange(100, dtype=np.int64)
    W = np.full((100, 500), 1 / 500)
    t_index = np.arange(100, dtype=np.int64)
    return {
        "brownian_paths": lambda m: m.brownian_paths(np.uint64(3), 2000, 200, d, 0.1, np.zeros(d)),
        "increments": lambda m: m.increments(pos, np.uint64(5), t_index, dx, off, k.kappa, k.h, scale),
        "field_overlaps": lambda m: m.field_overlaps(pos, steps, W, dx, off, k.kappa, k.h),
        "pair_overlap": lambda m: m.pair_overlap(pos[:, -1, :].copy(), W[0], k.v, k.h),
    }


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':<16} {'d':>2} {'numpy [s]':>11} {'numba [s]':>11} {'speedup':>8}")
    for d in (1, 3):
        for name, run in cases(d).items():
            t_np = best_of(lambda: run(_kernels_np), args.repeat)
            if _kernels_nb is None:
                print(f"{name:<16} {d:>2} {t_np:>11.4f} {'-':>11} {'-':>8}")
                continue
            t_nb = best_of(lambda: run(_kernels_nb), args.repeat)
            print(f"{name:<16} {d:>2} {t_np:>11.4f} {t_nb:>11.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
