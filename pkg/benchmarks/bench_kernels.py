"""Compare the numba and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``.  Both backends are
imported directly from :mod:`lzforge.kernels`, so ``LZFORGE_BACKEND`` has
no effect here.
"""

import argparse
import time

import numpy as np

from lzforge import kernels
from lzforge._backend import HAS_NUMBA


def best_of(func, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        func()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 4096, 65536, 1_000_000])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not HAS_NUMBA:
        print("numba is not importable; only the numpy kernels are timed")
    rng = np.random.default_rng(0)
    target = np.eye(2, dtype=np.complex128)
    empty = np.zeros(0, dtype=np.int64)

    print(f"{'kernel':<14}{'n':>10}{'numba [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}")
    for n in args.sizes:
        eps = rng.normal(0.0, 20.0, n)
        dt = 10.0 / n
        cases = {
            "chain": (
                lambda: kernels.chain_numba(eps, 1.0, dt, empty),
                lambda: kernels.chain_numpy(eps, 1.0, dt, empty),
            ),
            "overlap_grad": (
                lambda: kernels.overlap_grad_numba(eps, 1.0, dt, target),
                lambda: kernels.overlap_grad_numpy(eps, 1.0, dt, target),
            ),
        }
        for name, (fast, slow) in cases.items():
            if HAS_NUMBA:
                fast()  # compile outside the timed region
                t_fast = best_of(fast, args.repeats)
            else:
                t_fast = float("nan")
            t_slow = best_of(slow, args.repeats)
            print(f"{name:<14}{n:>10}{1e3 * t_fast:>14.3f}{1e3 * t_slow:>14.3f}{t_slow / t_fast:>10.1f}")


if __name__ == "__main__":
    main()
