import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")


def replicate_batches(replicates: int, batch_size: int) -> list[tuple[int, int]]:
    """Split [0, replicates) into contiguous (start, stop) index ranges."""
    batch_size = max(1, batch_size)
    return [(start, min(start + batch_size, replicates)) for start in range(0, replicates, batch_size)]


def map_batches(fn: Callable[[int, int], T], batches: list[tuple[int, int]], workers: int = 1) -> list[T]:
    """Run fn over replicate batches, returning results in batch order.

    Batches own disjoint replicate indices, so results are identical for any worker count.
    """
    if workers <= 1 or len(batches) <= 1:
        return [fn(start, stop) for start, stop in batches]
    log.debug("Running %d batches on %d workers", len(batches), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, start, stop) for start, stop in batches]
        return [f.result() for f in futures]
