"""Block-wise replicate fan-out with schedule-independent results.

Replicates are cut into fixed-size blocks; block ``b`` draws all of its
randomness from ``rng.child(b)``.  Because block boundaries never depend on
the thread count, outputs are identical for any ``threads`` value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

THREADS_ENV = "KPZH_LAB_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``KPZH_LAB_THREADS``, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        threads = int(raw) if raw else 1
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def block_ranges(reps: int, block: int) -> list[tuple[int, int, int]]:
    """``(block_index, start, stop)`` triples covering ``range(reps)``."""
    if reps < 0 or block < 1:
        raise ValueError("reps must be >= 0 and block >= 1")
    return [(b, lo, min(lo + block, reps)) for b, lo in enumerate(range(0, reps, block))]


def run_blocks(func: Callable[[int, int], object], reps: int, block: int, threads: int | None = None) -> list:
    """Evaluate ``func(block_index, size)`` for every block, in block order."""
    jobs = block_ranges(reps, block)
    n_threads = min(resolve_threads(threads), max(len(jobs), 1))
    if n_threads == 1:
        return [func(b, hi - lo) for b, lo, hi in jobs]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = [pool.submit(func, b, hi - lo) for b, lo, hi in jobs]
        return [f.result() for f in futures]


def concat_blocks(parts: list, axis: int = 0):
    """Concatenate block outputs; tuples are concatenated field-wise."""
    if not parts:
        return np.empty(0)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts], axis=axis) for i in range(len(parts[0])))
    return np.concatenate(parts, axis=axis)
