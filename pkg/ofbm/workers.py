"""Replicate fan-out over a bounded thread pool."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

T = TypeVar("T")


def map_replicates(func: Callable[[int], T], count: int, threads: int = 1) -> List[T]:
    """Apply func to replicate ids 0..count-1, returning results in id order."""
    if count <= 0:
        return []
    if threads <= 1 or count == 1:
        return [func(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(threads, count)) as pool:
        return list(pool.map(func, range(count)))
