#!/usr/bin/env python3
"""Timing comparison of the two kernel backends.

The hot kernels (per-sample gradient extraction and compensated
summation) ship in a jit-compiled form and a pure-numpy form with
identical semantics. This script times both on representative shapes
and reports the speedup plus the largest output difference, so a
backend regression shows up as either a slow row or a nonzero diff
beyond roundoff.

Run:  python3 benchmarks/bench_kernels.py [--repeats N] [--quick]
"""

import argparse
import time

import numpy as np

from spod._accel import NUMBA_AVAILABLE
from spod._kernels import grad_batch_numpy, kahan_add_numpy
from spod.nn import forward_batch, head_seeds, mlp

if NUMBA_AVAILABLE:
    from spod._kernels import grad_batch_numba, kahan_add_numba


GRAD_SHAPES = [
    # (batch, input_dim, hidden, classes) -- first row is the desk-scale default
    (256, 32, [64], 5),
    (1024, 32, [64], 5),
    (512, 64, [128, 128], 10),
    (2048, 16, [32], 4),
]

KAHAN_SHAPES = [
    # (rows, dim)
    (20000, 512),
    (100000, 64),
]


def best_of(fn, args, repeats):
    fn(*args)  # warm-up; compiles the jit path on first call
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gradients(repeats):
    print(f"{'gradient batch':<28} {'numpy':>10} {'jit':>10} {'speedup':>8} {'max|diff|':>10}")
    for batch, d, hidden, C in GRAD_SHAPES:
        net = mlp(d, hidden, C, seed=0)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(batch, d))
        logits, _ = forward_batch(net, X)
        seeds = head_seeds(logits, "max")
        args = (X, seeds, *net.pack())
        t_np = best_of(grad_batch_numpy, args, repeats)
        label = f"B={batch} {d}->{'x'.join(map(str, hidden))}->{C}"
        if not NUMBA_AVAILABLE:
            print(f"{label:<28} {t_np * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8} {'n/a':>10}")
            continue
        t_nb = best_of(grad_batch_numba, args, repeats)
        diff = float(np.max(np.abs(grad_batch_numpy(*args) - grad_batch_numba(*args))))
        print(f"{label:<28} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x {diff:>10.2e}")


def bench_kahan(repeats):
    print()
    print(f"{'compensated sum':<28} {'numpy':>10} {'jit':>10} {'speedup':>8} {'max|diff|':>10}")
    for rows, dim in KAHAN_SHAPES:
        rng = np.random.default_rng(1)
        data = rng.normal(size=(rows, dim)) * 0.1

        def run(fn):
            total = np.zeros(dim)
            comp = np.zeros(dim)
            fn(total, comp, data)
            return total

        t_np = best_of(lambda t, c, r: kahan_add_numpy(t, c, r),
                       (np.zeros(dim), np.zeros(dim), data), repeats)
        label = f"{rows} rows x {dim}"
        if not NUMBA_AVAILABLE:
            print(f"{label:<28} {t_np * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8} {'n/a':>10}")
            continue
        t_nb = best_of(lambda t, c, r: kahan_add_numba(t, c, r),
                       (np.zeros(dim), np.zeros(dim), data), repeats)
        diff = float(np.max(np.abs(run(kahan_add_numpy) - run(kahan_add_numba))))
        print(f"{label:<28} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x {diff:>10.2e}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions per shape (best is reported)")
    parser.add_argument("--quick", action="store_true",
                        help="smallest shape only, one repeat")
    args = parser.parse_args()
    if args.quick:
        del GRAD_SHAPES[1:]
        del KAHAN_SHAPES[1:]
        args.repeats = 1
    if not NUMBA_AVAILABLE:
        print("jit backend unavailable; timing the numpy fallback only\n")
    bench_gradients(args.repeats)
    bench_kahan(args.repeats)


if __name__ == "__main__":
    main()
