"""
Replica fan-out.

Cells are independent; results come back in submission order so the reducer
sees the same sequence whatever the worker count.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_replicas(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: int = 1,
    desc: Optional[str] = None,
    chunksize: int = 8,
) -> List[R]:
    """Map ``fn`` over ``items`` (inline when workers <= 1)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=None, leave=False)]

    logger.debug("fanning %d cells out to %d workers", len(items), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(
            tqdm(
                pool.map(fn, items, chunksize=chunksize),
                total=len(items),
                desc=desc,
                disable=None,
                leave=False,
            )
        )
