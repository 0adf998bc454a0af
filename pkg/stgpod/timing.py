"""Walltime helpers."""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class Timer:
    """Context manager recording the elapsed walltime in ``elapsed``."""

    __slots__ = ("name", "start", "elapsed")

    def __init__(self, name: Optional[str] = None):
        self.name = name
        self.start = 0.0
        self.elapsed = 0.0

    def __enter__(self) -> "Timer":
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc_info) -> None:
        self.elapsed = time.perf_counter() - self.start
        if self.name:
            logger.debug("%s: %.4fs", self.name, self.elapsed)


def best_of(fn: Callable[[], T], reps: int) -> Tuple[T, float]:
    """Run ``fn`` ``reps`` times; return the last result and the best walltime."""
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    best = float("inf")
    result = None
    for _ in range(reps):
        with Timer() as timer:
            result = fn()
        best = min(best, timer.elapsed)
    return result, best
