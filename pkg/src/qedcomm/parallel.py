"""Order-preserving parallel map used by the experiment drivers."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_WORKERS = "QEDCOMM_WORKERS"


def resolve_workers(workers: int | None = None) -> int:
    """Explicit value, else ``$QEDCOMM_WORKERS``, else the CPU count."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(ENV_WORKERS)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def pmap(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly across processes; output order matches input order."""
    items = list(items)
    n = min(resolve_workers(workers), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))
