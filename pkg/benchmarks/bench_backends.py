#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot kernels on simulator-shaped workloads and checks that
both implementations agree numerically. Run from the repository root:

    python benchmarks/bench_backends.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from protofed import kernels


def bench(fn, args, repeats):
    fn(*args)  # warm-up (JIT compile / cache load)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    workloads = {}

    # shapes the round loop actually hits: per-class clusterings on a few
    # dozen points, 32-sample batches against ~14 prototypes
    small = rng.normal(size=(20, 16))
    workloads["pairwise_cosine (20x16)"] = ("pairwise_cosine", (small,))
    small_sim = kernels.numpy_impls()["pairwise_cosine"](small)
    workloads["first_neighbor_labels (20)"] = ("first_neighbor_labels", (small_sim,))
    z = rng.uniform(0, 1, (32, 16))
    zy = rng.integers(0, 5, 32).astype(np.int64)
    protos = rng.uniform(0.05, 1, (14, 16))
    pclass = np.sort(rng.integers(0, 5, 14)).astype(np.int64)
    workloads["proto_loss_batch (32x14)"] = (
        "proto_loss_batch",
        (z, zy, protos, pclass, 0.25, 0.07, True, True),
    )

    # larger shapes, where numpy's BLAS matmuls catch up
    pts = rng.normal(size=(400, 16))
    workloads["pairwise_cosine (400x16)"] = ("pairwise_cosine", (pts,))
    sim = kernels.numpy_impls()["pairwise_cosine"](pts)
    workloads["first_neighbor_labels (400)"] = ("first_neighbor_labels", (sim,))
    zb = rng.uniform(0, 1, (256, 16))
    zyb = rng.integers(0, 5, 256).astype(np.int64)
    protosb = rng.uniform(0.05, 1, (60, 16))
    pclassb = np.sort(rng.integers(0, 5, 60)).astype(np.int64)
    workloads["proto_loss_batch (256x60)"] = (
        "proto_loss_batch",
        (zb, zyb, protosb, pclassb, 0.25, 0.07, True, True),
    )

    numpy_impls = kernels.numpy_impls()
    try:
        numba_impls = kernels.numba_impls()
    except ImportError:
        numba_impls = None
        print("numba unavailable; timing the numpy fallback only\n")

    print(f"{'kernel':34s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}  agreement")
    for label, (name, wargs) in workloads.items():
        t_np = bench(numpy_impls[name], wargs, args.repeats)
        if numba_impls is None:
            print(f"{label:34s} {t_np * 1e6:10.1f}us {'-':>12s} {'-':>9s}")
            continue
        t_nb = bench(numba_impls[name], wargs, args.repeats)
        a = numpy_impls[name](*wargs)
        b = numba_impls[name](*wargs)
        if isinstance(a, tuple):
            dev = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        else:
            dev = float(np.max(np.abs(a - b)))
        ok = "max |diff| %.1e" % dev
        print(f"{label:34s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us {t_np / t_nb:8.1f}x  {ok}")
        assert dev < 1e-9, f"backend disagreement on {name}"


if __name__ == "__main__":
    main()
