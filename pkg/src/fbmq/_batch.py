"""Replicate batching shared by the Monte Carlo modules.

Replicates are cut into batches whose boundaries depend only on ``n_reps`` and
``batch_size``.  Batches run serially or in a process pool; results come back in
batch order, so aggregates do not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def batch_bounds(n_reps: int, batch_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch_size, n_reps)) for lo in range(0, n_reps, batch_size)]


def batch_size_for(values_per_rep: int, budget: int = 1 << 21) -> int:
    """Replicates per batch so that one batch holds about ``budget`` floats."""
    return max(1, budget // max(values_per_rep, 1))


def run_batches(fn: Callable, n_reps: int, batch_size: int, workers: int = 1) -> Sequence:
    """Call ``fn(first, stop)`` for every batch and return the results in order."""
    bounds = batch_bounds(n_reps, batch_size)
    if workers <= 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]
