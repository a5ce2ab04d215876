"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time of each kernel on each backend and the speedup.
"""

import argparse
import statistics
import time

import numpy as np

from pessirelax import _kernels_py

try:
    from pessirelax import _kernels
except ImportError:
    _kernels = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return statistics.median(times)


def cases(rng):
    K, q = 200_000, 3
    g = rng.uniform(-1, 1, (K, q))
    u = rng.uniform(-0.5, 1.5, (K, q))
    for code, name in [(-1, "D"), (0, "S"), (2, "KDB"), (3, "SU"), (4, "KS")]:
        yield f"member_mask {name} K={K}", (lambda mod, c=code: mod.member_mask(c, g, u, 0.25, 1e-9))
    # grid-like point clouds: nearby sets, as the sampler produces
    A = np.round(rng.uniform(0, 1, (6000, 3)), 3)
    B = np.round(A[rng.permutation(6000)[:5000]] + rng.normal(0, 0.01, (5000, 3)), 3)
    yield "excess 6000x5000 dim 3", (lambda mod: mod.excess(A, B))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':32s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>9s}")
    for label, fn in cases(rng):
        a, b = fn(_kernels_py), fn(_kernels)
        if isinstance(a, np.ndarray):
            assert np.array_equal(a, b), label
        else:
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a)), label
        tp = _median_time(lambda: fn(_kernels_py), args.repeat)
        tc = _median_time(lambda: fn(_kernels), args.repeat)
        print(f"{label:32s} {tp:12.4f} {tc:13.4f} {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
