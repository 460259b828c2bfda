"""Thread-count control and an order-preserving parallel map.

Set ``GLCC_NUM_THREADS`` to run independent jobs (per-view graph builds,
grid cells, sweep repeats) on a thread pool.  Results always come back in
input order, so outputs do not depend on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from .errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "GLCC_NUM_THREADS"


def num_threads() -> int:
    raw = os.environ.get(ENV_VAR, "1").strip() or "1"
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {value}")
    return value


def ordered_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    workers = min(num_threads(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
