"""Timing comparison of the compiled hot kernels against their NumPy fallbacks.

Run with:

    python3 benchmarks/bench_kernels.py

Kernels are selected at call time via FOLEYSYNC_NO_NUMBA, so both variants
can be measured in one process. The first compiled call includes JIT
compilation and is excluded by a warmup pass.
"""

import os
import time

import numpy as np

from foleysync import kernels


def _time(fn, repeats=20):
    fn()  # warmup (and JIT compile for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_peak_pick(rng, n):
    env = np.abs(rng.normal(size=n)).cumsum() % 7.0
    args = dict(pre_max=30, post_max=30, pre_avg=100, post_avg=100,
                delta=0.05, wait=30)
    return lambda: kernels.peak_pick(env, **args)


def bench_greedy_match(rng, n):
    pred = np.sort(rng.uniform(0, n / 100.0, n))
    gt = np.sort(rng.uniform(0, n / 100.0, n))
    return lambda: kernels.greedy_match(pred, gt, 0.05)


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("peak_pick", 10_000, bench_peak_pick),
        ("peak_pick", 200_000, bench_peak_pick),
        ("greedy_match", 1_000, bench_greedy_match),
        ("greedy_match", 20_000, bench_greedy_match),
    ]
    rows = []
    for name, n, make in cases:
        fn = make(rng, n)
        os.environ["FOLEYSYNC_NO_NUMBA"] = "1"
        t_np = _time(fn)
        os.environ["FOLEYSYNC_NO_NUMBA"] = "0"
        t_nb = _time(fn) if kernels.use_numba() else float("nan")
        rows.append((f"{name}[n={n}]", t_np, t_nb))

    print(f"{'kernel':<24}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for label, t_np, t_nb in rows:
        speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{label:<24}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
