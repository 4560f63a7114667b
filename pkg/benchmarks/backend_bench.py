"""Benchmark the numba kernel backend against the pure-numpy fallback.

Times each hot kernel on encoder-sized workloads and prints per-kernel
means plus the numba speedup. Run from the repository root:

    python3 benchmarks/backend_bench.py
    python3 benchmarks/backend_bench.py --reps 20 --csv bench.csv

Needs the default (auto) or numba backend; under OSAL_BACKEND=numpy the
numba implementations are never compiled and only the numpy column runs.
"""
import argparse
import csv
import time

import numpy as np

from osal.kernels import numba_impl, numpy_impl


def conv_args(rng):
    xp = rng.standard_normal((64, 6, 12, 12))
    w = rng.standard_normal((16, 6, 5, 5))
    b = rng.standard_normal(16)
    return xp, w, b


def conv_bw_args(rng):
    xp = rng.standard_normal((64, 6, 12, 12))
    gout = rng.standard_normal((64, 16, 8, 8))
    return xp, gout


def pool_args(rng):
    return (rng.standard_normal((128, 16, 8, 8)),)


def pool_bw_args(rng):
    x = rng.standard_normal((128, 16, 8, 8))
    out, idx = numpy_impl.maxpool2_forward(x)
    return np.ones_like(out), idx, 8, 8


def dist_args(rng):
    return rng.standard_normal((5000, 60)), rng.standard_normal((10, 60))


CASES = [
    ("conv2d_forward", conv_args),
    ("conv2d_backward_weights", conv_bw_args),
    ("maxpool2_forward", pool_args),
    ("maxpool2_backward", pool_bw_args),
    ("pairwise_sq_dists", dist_args),
]


def time_call(fn, args, reps):
    fn(*args)  # warm-up; also triggers jit compilation
    times = []
    for _ in range(reps):
        tic = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - tic)
    return float(np.mean(times)), float(np.std(times, ddof=1))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", type=str, default=None)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    header = f"{'kernel':>26} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, make_args in CASES:
        call_args = make_args(rng)
        np_mean, np_std = time_call(getattr(numpy_impl, name), call_args, args.reps)
        if numba_impl is None:
            print(f"{name:>26} {np_mean * 1e3:12.3f} {'n/a':>12} {'n/a':>9}")
            rows.append([name, repr(np_mean), repr(np_std), "", "", ""])
            continue
        nb_mean, nb_std = time_call(getattr(numba_impl, name), call_args, args.reps)
        print(
            f"{name:>26} {np_mean * 1e3:12.3f} {nb_mean * 1e3:12.3f} "
            f"{np_mean / nb_mean:8.2f}x"
        )
        rows.append(
            [name, repr(np_mean), repr(np_std), repr(nb_mean), repr(nb_std),
             repr(np_mean / nb_mean)]
        )
    if numba_impl is None:
        print("numba backend unavailable (OSAL_BACKEND=numpy or numba missing)")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["kernel", "numpy_mean_s", "numpy_std_s", "numba_mean_s",
                 "numba_std_s", "speedup"]
            )
            writer.writerows(rows)
        print(f"csv -> {args.csv}")


if __name__ == "__main__":
    main()
