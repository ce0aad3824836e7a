"""
Bounded fan-out of independent jobs.

Jobs are zero-argument callables. With ``workers > 1`` they run on threads via
``asyncio.to_thread`` gathered under a semaphore; results always come back in
submission order, never completion order, so callers can merge them by position.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Callable, Sequence, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")


async def _gather_bounded(jobs: Sequence[Callable[[], T]], workers: int, bar: tqdm | None) -> list[T]:
    semaphore = asyncio.Semaphore(workers)

    async def _run(job: Callable[[], T]) -> T:
        async with semaphore:
            result = await asyncio.to_thread(job)
        if bar is not None:
            bar.update(1)
        return result

    return list(await asyncio.gather(*(_run(job) for job in jobs)))


def run_bounded(
    jobs: Sequence[Callable[[], T]],
    workers: int = 1,
    progress: bool = False,
    desc: str | None = None,
) -> list[T]:
    """Run ``jobs`` with at most ``workers`` in flight; return results in order."""
    jobs = list(jobs)
    if not jobs:
        return []
    workers = max(1, int(workers))
    bar = tqdm(total=len(jobs), desc=desc, disable=not progress, leave=False)
    try:
        if workers == 1 or len(jobs) == 1:
            results = []
            for job in jobs:
                results.append(job())
                bar.update(1)
            return results
        logger.debug("🚀 running %d jobs on %d workers", len(jobs), workers)
        return asyncio.run(_gather_bounded(jobs, workers, bar))
    finally:
        bar.close()
