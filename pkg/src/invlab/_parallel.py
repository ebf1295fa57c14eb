"""Ordered parallel map over independent work items.

The worker count comes from the ``INVLAB_WORKERS`` environment variable
(default 1). Results are always returned in input order, so reductions over
them are deterministic whatever the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "INVLAB_WORKERS"


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        n = int(raw) if raw else default
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    items = list(items)
    n = worker_count() if workers is None else max(1, workers)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
