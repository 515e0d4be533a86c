#!/usr/bin/env python3
"""
Replication seeding and worker pool.

Replication i of a scenario draws from its own Philox stream seeded by
seed_for(master_seed, i), so outcomes never depend on which worker ran them
or in which order.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def seed_for(master_seed: int, replication_index: int) -> int:
    """
    SplitMix64 output for position replication_index + 1 of the stream keyed by master_seed.

    The finaliser is a bijection on 64-bit words and the pre-image
    master_seed + (i + 1) * GOLDEN_GAMMA is distinct for every i < 2**64,
    so seeds never collide within one master seed.
    """
    z = (master_seed + (replication_index + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed & MASK64))


def worker_count(default: Optional[int] = None) -> int:
    """Worker processes from TRANSIENT_WORKERS, else the CPU count."""
    value = os.environ.get('TRANSIENT_WORKERS')
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"Ignoring non-integer TRANSIENT_WORKERS={value!r}")
    return default or os.cpu_count() or 1


def run_parallel(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Map fn over items, preserving input order. workers=1 runs in-process."""
    items = list(items)
    workers = workers or worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    workers = min(workers, len(items))
    logger.debug(f"Dispatching {len(items)} tasks to {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
