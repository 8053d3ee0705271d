"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from fbsdexp import _pykernels

try:
    from fbsdexp import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    n = 4096
    a, g = rng.normal(size=2 * n + 1), rng.normal(size=2 * n + 1)
    yield "rk4_linear_terminal (4096 steps)", "rk4_linear_terminal", (a, g, 1.0, 1.0 / n)
    steps, paths = 100, 20_000
    coeffs = [0.1 * rng.normal(size=steps + 1) for _ in range(9)]
    noise = [rng.normal(size=(paths, steps)) * 0.1 for _ in range(3)]
    yield "flows_euler (20000 x 100)", "flows_euler", (*coeffs, *noise, 1.0 / steps)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for label, name, call_args in cases(rng):
        t_py = min(timeit.repeat(lambda: getattr(_pykernels, name)(*call_args), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{label:36s} {1e3 * t_py:12.2f} {'n/a':>12s} {'n/a':>9s}")
            continue
        t_cy = min(timeit.repeat(lambda: getattr(_ckernels, name)(*call_args), number=1, repeat=args.repeat))
        print(f"{label:36s} {1e3 * t_py:12.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
