#!/usr/bin/env python3
"""Timing comparison of the two kernel backends and the two neighborhood
attention execution paths.

Usage: python benchmarks/bench_kernels.py [--quick]
"""
import argparse
import time

import numpy as np

import hdit.kernels as K
from hdit import blocks as B
from hdit.rng import INIT, RngStream
from hdit.tensor import Tensor


def timeit(fn, min_time=0.2):
    fn()  # warm up / JIT caches
    reps = 0
    t0 = time.perf_counter()
    while True:
        fn()
        reps += 1
        dt = time.perf_counter() - t0
        if dt >= min_time and reps >= 3:
            return dt / reps


class force_backend:
    """Temporarily pin kernels to the compiled or fallback path."""

    def __init__(self, native: bool):
        self.native = native

    def __enter__(self):
        self.saved = K._native
        if self.native and self.saved is None:
            raise RuntimeError("compiled extension not available")
        K._native = self.saved if self.native else None

    def __exit__(self, *exc):
        K._native = self.saved


def bench_gather_scatter(quick: bool) -> None:
    print("== gather / scatter-add (B=8, D=64, kernel 7 window indices) ==")
    print(f"{'map':>8} {'rows':>10} {'gather np':>11} {'gather ext':>11} "
          f"{'scatter np':>11} {'scatter ext':>12} {'speedup':>8}")
    sides = (16, 32, 64) if quick else (16, 32, 64, 96)
    rng = RngStream(0, INIT)
    for side in sides:
        idx = B.neighborhood_index(side, side, 7).reshape(-1)
        src = rng.normal((8, side * side, 64), dtype=np.float64).astype(np.float32)
        gathered = K.gather_rows(src, idx)
        times = {}
        for native in (False, True) if K.HAVE_NATIVE else (False,):
            with force_backend(native):
                times[("g", native)] = timeit(lambda: K.gather_rows(src, idx))
                dst = np.zeros_like(src)
                times[("s", native)] = timeit(
                    lambda: K.scatter_add_rows(dst, idx, gathered))
        if K.HAVE_NATIVE:
            speed = times[("s", False)] / times[("s", True)]
            print(f"{side:>5}^2 {idx.size:>10} {times[('g', False)]*1e3:>9.2f}ms "
                  f"{times[('g', True)]*1e3:>9.2f}ms {times[('s', False)]*1e3:>9.2f}ms "
                  f"{times[('s', True)]*1e3:>10.2f}ms {speed:>7.1f}x")
        else:
            print(f"{side:>5}^2 {idx.size:>10} {times[('g', False)]*1e3:>9.2f}ms "
                  f"{'-':>11} {times[('s', False)]*1e3:>9.2f}ms {'-':>12}")


def bench_attention_paths(quick: bool) -> None:
    print()
    print("== neighborhood attention: dense-masked vs windowed (heads=6, "
          "d_head=64, kernel 7) ==")
    print(f"{'map':>8} {'tokens':>8} {'dense':>10} {'windowed':>10} {'winner':>9}")
    sides = (8, 16, 32) if quick else (8, 16, 24, 32, 48, 64)
    rng = RngStream(1, INIT)
    for side in sides:
        n = side * side
        q = Tensor(rng.normal((1, 6, n, 64), dtype=np.float64).astype(np.float32))
        k = Tensor(rng.normal((1, 6, n, 64), dtype=np.float64).astype(np.float32))
        v = Tensor(rng.normal((1, 6, n, 64), dtype=np.float64).astype(np.float32))
        tau = Tensor(np.full(6, 10.0, dtype=np.float32))
        td = timeit(lambda: B.neighborhood_attention(q, k, v, tau, side, side, 7,
                                                     mode="dense"))
        tw = timeit(lambda: B.neighborhood_attention(q, k, v, tau, side, side, 7,
                                                     mode="windowed"))
        winner = "dense" if td < tw else "windowed"
        print(f"{side:>5}^2 {n:>8} {td*1e3:>8.2f}ms {tw*1e3:>8.2f}ms {winner:>9}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="fewer, smaller sizes")
    args = ap.parse_args()
    print(f"compiled extension available: {K.HAVE_NATIVE}")
    bench_gather_scatter(args.quick)
    bench_attention_paths(args.quick)


if __name__ == "__main__":
    main()
