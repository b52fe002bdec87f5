"""Benchmark the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat 7]

Each kernel is timed on workloads shaped like real training/eval runs
(dataset rendering, batch distance matrices, elastica solver inner
loop).  Reported numbers are per-call medians.
"""

import argparse
import time

import numpy as np

from geomkit.kernels import _py

try:
    from geomkit.kernels import _cy
except ImportError:
    _cy = None


def splat_work():
    rng = np.random.default_rng(0)
    n, c, h, w = 220, 3, 128, 128
    return (rng.uniform(0, h, n), rng.uniform(0, w, n),
            rng.uniform(0, 1, (n, c)), rng.uniform(0.5, 2.5, n), h, w)


def pairwise_work():
    return (np.random.default_rng(1).normal(size=(128, 768)),)


def curve_work():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.normal(size=(401, 8)) * 0.05 + 0.1, axis=0)
    return (pts, 1.0)


CASES = [
    ("splat_accumulate (220 pts, 3x128x128)", "splat_accumulate", splat_work()),
    ("pairwise_dist (128 x 768)", "pairwise_dist", pairwise_work()),
    ("elastica_energy (m=400, d=8)", "elastica_energy", curve_work()),
    ("elastica_energy_grad (m=400, d=8)", "elastica_energy_grad", curve_work()),
]


def median_time(fn, args, repeat, inner):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--inner", type=int, default=5,
                        help="calls per timed block")
    args = parser.parse_args()
    if _cy is None:
        print("compiled extension not importable; nothing to compare")
        return
    width = max(len(name) for name, _, _ in CASES)
    print(f"{'kernel':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>7}")
    for name, attr, work in CASES:
        t_py = median_time(getattr(_py, attr), work, args.repeat, args.inner)
        t_cy = median_time(getattr(_cy, attr), work, args.repeat, args.inner)
        print(f"{name:<{width}}  {t_py * 1e3:>8.3f}ms  {t_cy * 1e3:>8.3f}ms  "
              f"{t_py / t_cy:>6.1f}x")


if __name__ == "__main__":
    main()
