"""Benchmark the jit mask kernels against the pure numpy fallback.

Times the pairwise IoU kernel and the group averaging kernel on a stage-2
sized workload and verifies both backends return identical bits. Run:

    python3 benchmarks/bench_maskops.py [--pixels 262144] [--exprs 16] [--repeats 5]
"""

import argparse
import time

import numpy as np

from synres import _kernels_np, _kernels_numba


def bench(label, fn, args, repeats):
    fn(*args)  # warmup / jit compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    print(f"  {label:<8} {best * 1e3:10.2f} ms")
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--pixels", type=int, default=512 * 512)
    parser.add_argument("--exprs", type=int, default=16)
    parser.add_argument("--group", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    bits = np.ascontiguousarray(rng.random((args.exprs, args.pixels)) < 0.4)
    values = np.ascontiguousarray(rng.random((args.group, args.pixels)))

    out_np = _kernels_np.pairwise_iou_unit(bits)
    out_nb = _kernels_numba.pairwise_iou_unit(bits)
    assert np.array_equal(out_np, out_nb), "backends disagree on pairwise IoU"
    mean_np = _kernels_np.group_mean(values)
    mean_nb = _kernels_numba.group_mean(values)
    assert np.array_equal(mean_np, mean_nb), "backends disagree on group mean"
    print("backends agree bit for bit")

    print(f"pairwise_iou_unit ({args.exprs} x {args.pixels} px)")
    t_np = bench("numpy", _kernels_np.pairwise_iou_unit, (bits,), args.repeats)
    t_nb = bench("numba", _kernels_numba.pairwise_iou_unit, (bits,), args.repeats)
    print(f"  speedup  {t_np / t_nb:10.2f}x")

    print(f"group_mean ({args.group} x {args.pixels} px)")
    t_np = bench("numpy", _kernels_np.group_mean, (values,), args.repeats)
    t_nb = bench("numba", _kernels_numba.group_mean, (values,), args.repeats)
    print(f"  speedup  {t_np / t_nb:10.2f}x")


if __name__ == "__main__":
    main()
