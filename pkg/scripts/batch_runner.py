#!/usr/bin/env python3
# ABOUTME: Concurrent execution of independent syntheses and scenario runs
# ABOUTME: Bounded by a semaphore, per-job error capture, results in input order

import asyncio
import logging
from typing import Any, Callable

logger = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 4

Job = tuple[Callable[..., Any], dict]
JobResult = tuple[Any, dict, Exception | None]


async def run_one(func: Callable[..., Any], kwargs: dict, timeout_seconds: float | None = None) -> Any:
    """Run a blocking job in a worker thread.

    Raises:
        TimeoutError: If the job does not finish within timeout_seconds
    """
    if timeout_seconds is None:
        return await asyncio.to_thread(func, **kwargs)
    try:
        async with asyncio.timeout(timeout_seconds):
            return await asyncio.to_thread(func, **kwargs)
    except asyncio.TimeoutError:
        raise TimeoutError(f"job timed out after {timeout_seconds}s")


async def run_batch(
    jobs: list[tuple[Job, dict]],
    max_concurrent: int = DEFAULT_CONCURRENCY,
    timeout_seconds: float | None = None,
    progress_callback: Callable[[int, int, dict], None] | None = None,
) -> list[JobResult]:
    """
    Run independent jobs concurrently with a concurrency limit.

    Args:
        jobs: List of ((func, kwargs), metadata) tuples
        max_concurrent: Maximum jobs in flight
        timeout_seconds: Timeout per job (None waits forever)
        progress_callback: Optional callback(completed, total, metadata) for progress

    Returns:
        List of (result, metadata, error) tuples in the order of jobs.
        error is None on success, the raised exception on failure.
    """
    if max_concurrent < 1:
        raise ValueError(f"max_concurrent must be at least 1, got {max_concurrent}")
    semaphore = asyncio.Semaphore(max_concurrent)
    completed = 0

    async def process_one(job: Job, metadata: dict) -> JobResult:
        nonlocal completed
        func, kwargs = job
        async with semaphore:
            try:
                result = await run_one(func, kwargs, timeout_seconds)
                error = None
            except Exception as e:
                logger.warning("job %s failed: %s", metadata, e)
                result, error = None, e
            completed += 1
            if progress_callback:
                progress_callback(completed, len(jobs), metadata)
            return (result, metadata, error)

    tasks = [process_one(job, meta) for job, meta in jobs]
    return await asyncio.gather(*tasks)


def run_batch_sync(
    jobs: list[tuple[Job, dict]],
    max_concurrent: int = DEFAULT_CONCURRENCY,
    timeout_seconds: float | None = None,
    progress_callback: Callable[[int, int, dict], None] | None = None,
) -> list[JobResult]:
    """Synchronous wrapper for run_batch()."""
    return asyncio.run(run_batch(jobs, max_concurrent, timeout_seconds, progress_callback))


def split_results(results: list[JobResult]) -> tuple[list[tuple[Any, dict]], list[tuple[dict, Exception]]]:
    """Separate successful (result, metadata) pairs from (metadata, error) failures."""
    ok = [(result, meta) for result, meta, error in results if error is None]
    failed = [(meta, error) for _, meta, error in results if error is not None]
    return ok, failed
