"""Compare the numba and numpy backends of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py``. The first numba call per
kernel is excluded from the timings (compilation or cache load).
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gmvptest import _kernels


def _inputs(size: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal(size)
    xi2 = rng.chisquare(250, size)
    xi3 = rng.chisquare(499, size)
    xi4 = rng.chisquare(248, size)
    z = rng.uniform(0.0, 0.9, size // 100 or 1)
    pvals = np.sort(rng.uniform(size=size))
    thresholds = np.linspace(0.01, 0.99, 99)
    return omega, xi2, xi3, xi4, z, pvals, thresholds


def _cases(kernels, data):
    omega, xi2, xi3, xi4, z, pvals, thresholds = data
    return {
        "tn_transform": lambda: kernels.tn_transform(omega, xi2, xi3, xi4, 0.3, 250 / 249),
        "hyp2f1_series": lambda: kernels.hyp2f1_series(24.5, 24.5, 2.0, z),
        "count_below": lambda: kernels.count_below(pvals, thresholds),
    }


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=1_000_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    data = _inputs(args.size)
    backends = {"numpy": _kernels.numpy_kernels}
    if _kernels.numba_kernels is not None:
        backends["numba"] = _kernels.numba_kernels
    print(f"active backend: {_kernels.BACKEND}; size={args.size}")
    print(f"{'kernel':<16}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for kernel in _cases(_kernels.numpy_kernels, data):
        times = {}
        for name, kernels in backends.items():
            fn = _cases(kernels, data)[kernel]
            fn()
            times[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{kernel:<16}" + "".join(f"{times[n] * 1e3:>12.2f}ms" for n in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
