#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--size 1000000] [--repeats 20]

The compiled path is imported directly; the numpy path is the fallback
implementation the package selects when MOMENTSTEER_DISABLE_NUMBA=1.
First numba calls include compilation, so every kernel is warmed before
timing.
"""

import argparse
import time

import numpy as np

from momentsteer import kernels
from momentsteer.kernels import _polyval_numpy, _power_sums_numpy, _rejection_numpy

if not kernels.NUMBA_ENABLED:
    raise SystemExit("numba path disabled or unavailable; nothing to compare")

from momentsteer.kernels import _polyval_jit, _power_sums_jit, _rejection_jit


def best_of(func, repeats, *args):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - start)
    return min(times)


def report(name, numpy_time, jit_time):
    speedup = numpy_time / jit_time
    print(f"{name:<28} numpy {numpy_time * 1e3:9.3f} ms   "
          f"numba {jit_time * 1e3:9.3f} ms   x{speedup:5.2f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=1_000_000)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    samples = rng.standard_normal(args.size)
    coef = np.array([0.3, -0.05, 0.02, 0.001, 0.0004])
    grid = rng.uniform(-20, 20, size=args.size)

    # realized-density shape for the sampler benchmark
    qcoef = np.array([0.5, 0.0, -0.08, 0.0, 0.004])
    lo, hi = -12.0, 12.0
    probe = np.linspace(lo, hi, 4096)
    ratio = 1.0 / (1.0 + _polyval_numpy(qcoef, probe)) ** 2
    inv_m = 1.0 / (1.2 * ratio.max())
    sampler_args = (20_000, 7, 1, kernels.REF_GAUSSIAN, 0.0, 3.0,
                    qcoef, lo, hi, inv_m, 100_000)

    # warm the compiled kernels
    _power_sums_jit(samples[:100], 4)
    _polyval_jit(coef, grid[:100])
    _rejection_jit(16, 7, 1, kernels.REF_GAUSSIAN, 0.0, 3.0, qcoef,
                   lo, hi, inv_m, 100_000)

    print(f"array size {args.size:,}, best of {args.repeats} runs")
    report("power sums (order 4)",
           best_of(_power_sums_numpy, args.repeats, samples, 4),
           best_of(_power_sums_jit, args.repeats, samples, 4))
    report("polynomial evaluation",
           best_of(_polyval_numpy, args.repeats, coef, grid),
           best_of(_polyval_jit, args.repeats, coef, grid))
    report("rejection sampling (20k)",
           best_of(_rejection_numpy, args.repeats, *sampler_args),
           best_of(_rejection_jit, args.repeats, *sampler_args))


if __name__ == "__main__":
    main()
