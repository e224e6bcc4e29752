"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

The numba timings exclude the first (compiling) call. Under
MUCS_DISABLE_NUMBA=1 both columns run the same plain-python loop code.
"""

import argparse
import time

import numpy as np

from mucs import kernels
from mucs._accel import backend


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    conf = rng.uniform(0, 1, 1_000_000)
    emb = rng.normal(size=(2000, 64))
    patterns = rng.integers(0, 5, 3000).astype(np.int64)
    points = rng.uniform(0, 1, (3000, 2))
    tie = rng.permutation(3000).astype(np.int64)
    seeds = np.array([0, 1, 2], dtype=np.int64)
    labels = rng.integers(0, 5, (200_000, 20)).astype(np.int64)
    return [
        ("bin_index n=1e6", kernels.bin_index_loop, kernels.bin_index_np, (conf, 30)),
        ("cosine_topk 2000x2000 k=10", kernels.cosine_topk_loop, kernels.cosine_topk_np, (emb, emb, 10, True)),
        ("ats_greedy n=3000", kernels.ats_greedy_loop, kernels.ats_greedy_np, (patterns, points, tie, seeds)),
        ("mode_counts 2e5x20", kernels.mode_counts_loop, kernels.mode_counts_np, (labels, 5)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"backend: {backend()}")
    print(f"{'kernel':30s} {'loop (s)':>10s} {'numpy (s)':>10s} {'speedup':>8s}")
    for name, loop, vec, fargs in cases(np.random.default_rng(args.seed)):
        loop(*fargs)  # compile
        t_loop = best_of(loop, fargs, args.repeat)
        t_np = best_of(vec, fargs, args.repeat)
        print(f"{name:30s} {t_loop:10.4f} {t_np:10.4f} {t_np / t_loop:8.2f}x")


if __name__ == "__main__":
    main()
