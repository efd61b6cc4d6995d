"""Benchmark the compiled render kernels against the numpy fallback.

Both backends are exercised on identical inputs; outputs are compared for
bit equality before timing so the speedup numbers describe the same work.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mvanomaly._kernels import numpy_impl

try:
    from mvanomaly._kernels import _render as compiled
except ImportError:
    compiled = None


def splat_inputs(rng: np.random.Generator, n: int, resolution: int) -> tuple:
    rows = rng.integers(-2, resolution + 2, size=n).astype(np.int64)
    cols = rng.integers(-2, resolution + 2, size=n).astype(np.int64)
    z = rng.standard_normal(n)
    ids = rng.permutation(2 * n)[:n].astype(np.int64)
    return rows, cols, z, ids, resolution


def means_inputs(rng: np.random.Generator, n_pixels: int, n_points: int) -> tuple:
    pix2point = rng.integers(-1, n_points, size=n_pixels).astype(np.int64)
    values = rng.standard_normal(n_pixels)
    return pix2point, values, n_points


def as_tuple(result) -> tuple:
    return result if isinstance(result, tuple) else (result,)


def best_of(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=200_000)
    parser.add_argument("--resolution", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    splat = splat_inputs(rng, args.points, args.resolution)
    means = means_inputs(rng, 9 * args.resolution**2, args.points)

    cases = [
        ("splat_zbuffer", splat, args.points),
        ("accumulate_means", means, 9 * args.resolution**2),
    ]
    print(f"{'kernel':<18} {'n':>9} {'numpy':>12} {'compiled':>12} {'speedup':>9}")
    for name, inputs, n in cases:
        ref = getattr(numpy_impl, name)(*inputs)
        t_numpy = best_of(getattr(numpy_impl, name), inputs, args.repeats)
        if compiled is None:
            print(f"{name:<18} {n:>9} {t_numpy * 1e3:>10.2f}ms {'n/a':>12} {'n/a':>9}")
            continue
        got = getattr(compiled, name)(*inputs)
        for a, b in zip(as_tuple(ref), as_tuple(got)):
            if not np.array_equal(a, b):
                raise AssertionError(f"{name}: backends disagree")
        t_comp = best_of(getattr(compiled, name), inputs, args.repeats)
        print(
            f"{name:<18} {n:>9} {t_numpy * 1e3:>10.2f}ms "
            f"{t_comp * 1e3:>10.2f}ms {t_numpy / t_comp:>8.1f}x"
        )
    if compiled is None:
        print("compiled extension not importable; only the fallback was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
