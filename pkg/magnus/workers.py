"""Dynamic row-block scheduling.

Each worker walks the work lists in order and claims fixed-size blocks from a
shared counter per list, so a worker that runs out of blocks in one list moves
straight on to the next without waiting for the others.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Sequence

from loguru import logger

from .config import BLOCK_ROWS

BlockBody = Callable[[int, int, Any], None]


@dataclass
class WorkList:
    name: str
    n_items: int
    body: BlockBody
    block: int = BLOCK_ROWS


def _drain(work: Sequence[WorkList], counters: List[itertools.count], scratch: Any) -> int:
    claimed = 0
    for item, counter in zip(work, counters):
        while True:
            begin = next(counter) * item.block
            if begin >= item.n_items:
                break
            item.body(begin, min(begin + item.block, item.n_items), scratch)
            claimed += 1
    return claimed


def run_dynamic(work: Sequence[WorkList], threads: int, make_scratch: Callable[[], Any]) -> None:
    """Run every block of every work list; scratch is created once per worker.

    With one thread all blocks run inline in list order.
    """
    counters = [itertools.count() for _ in work]
    if threads <= 1:
        _drain(work, counters, make_scratch())
        return
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix='magnus') as pool:
        futures = [pool.submit(lambda: _drain(work, counters, make_scratch())) for _ in range(threads)]
        claimed = [f.result() for f in futures]
    logger.debug(f'blocks per worker: {claimed}')
