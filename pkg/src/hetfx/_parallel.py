"""Worker-pool plumbing shared by the resampling and simulation modules."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_ENV_VAR = "HETFX_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Number of worker threads: explicit argument, else HETFX_THREADS, else all cores.

    A value of 0 (or an unset variable) means auto-detect.
    """
    if requested is None:
        raw = os.environ.get(_ENV_VAR, "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"{_ENV_VAR} must be an integer, got {raw!r}")
    if requested < 0:
        raise ValueError("thread count cannot be negative")
    if requested == 0:
        requested = os.cpu_count() or 1
    return requested


def parallel_map(fn: Callable[[T], R], items: Sequence[T],
                 threads: int | None = None) -> list[R]:
    """Map ``fn`` over ``items`` and return results in input order.

    Tasks share no mutable state, so the result is identical for any
    worker count; with one worker the pool is skipped entirely.
    """
    threads = resolve_threads(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    """Fixed [start, stop) partition of ``range(total)``."""
    return [(a, min(a + chunk, total)) for a in range(0, total, chunk)]
