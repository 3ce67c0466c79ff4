"""Compare the numba and numpy backends of the prefix kernels.

Run with ``python3 benchmarks/bench_kernels.py [--rows R] [--nodes N] [--repeat K]``.
Prints best-of-K wall time per backend and the largest disagreement.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from kpzh_lab import _accel
from kpzh_lab.paths import RngStream, brownian_rows, make_grid


def best_time(func, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        func()
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=64)
    parser.add_argument("--nodes", type=int, default=25_601)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    step = 2.0**-10
    half = (args.nodes - 1) // 2
    grid = make_grid(-half * step, half * step, step)
    data = brownian_rows(grid, 1.0, 1.0, RngStream(0).generator(), args.rows)
    print(f"rows={args.rows} nodes={grid.n_nodes} numba_available={_accel.HAS_NUMBA}")

    kernels = {
        "log_cumtrapz_exp": lambda backend: _accel.log_cumtrapz_exp(data, step, 0, backend=backend),
        "running_max": lambda backend: _accel.running_max(data, 0, backend=backend),
    }
    for name, kernel in kernels.items():
        reference = kernel("numpy")
        t_numpy = best_time(lambda: kernel("numpy"), args.repeat)
        line = f"{name:18s} numpy {t_numpy * 1e3:9.2f} ms"
        if _accel.HAS_NUMBA:
            kernel("numba")  # compile outside the timed region
            t_numba = best_time(lambda: kernel("numba"), args.repeat)
            with np.errstate(invalid="ignore"):
                diff = float(np.nanmax(np.abs(kernel("numba") - reference)))
            line += f"  numba {t_numba * 1e3:9.2f} ms  speedup {t_numpy / t_numba:5.2f}x  max|diff| {diff:.2e}"
        print(line)


if __name__ == "__main__":
    main()
