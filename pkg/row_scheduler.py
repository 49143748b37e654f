#!/usr/bin/env python3
"""
Ready-Flag Row Scheduler

Runs a per-row kernel over a dependency DAG on a pool of worker threads:
- one ready flag (threading.Event) per row
- rows are claimed in processing order under a lock
- a worker blocked on an unready dependency assists by running the next
  unclaimed row when all of that row's dependencies are ready, otherwise it
  waits briefly on the flag and retries
- on failure, rows after the failing row are abandoned and the error of the
  earliest failing row (in processing order) is raised

Dependencies must point to rows that come earlier in processing order, which
makes every schedule deadlock-free: the earliest claimed unfinished row always
has its dependencies complete.

Used by numeric_lu (ascending rows) and trisolve (ascending for L, descending
for U).
"""

import logging
import threading
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Configuration
WAIT_SLICE_SECONDS = 0.001
NO_FAILURE = float('inf')


class RowScheduler:
    """Dependency-driven execution of a row kernel on worker threads."""

    def __init__(self, dependencies: Sequence[Sequence[int]], worker_count: int,
                 descending: bool = False, jitter: float = 0.0, seed: Optional[int] = None):
        """
        Args:
            dependencies: dependencies[i] lists the rows that must finish before row i
            worker_count: Number of worker threads (>= 1)
            descending: Process rows n-1 .. 0 instead of 0 .. n-1
            jitter: Upper bound in seconds of a random sleep before each row
            seed: Seed for the jitter generator
        """
        if worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {worker_count}")
        self.logger = logging.getLogger(__name__)
        self.n = len(dependencies)
        self.worker_count = worker_count
        self.descending = descending
        self.jitter = jitter
        self.seed = seed
        self.order: List[int] = list(range(self.n - 1, -1, -1)) if descending else list(range(self.n))
        self.dependencies: List[List[int]] = [list(map(int, deps)) for deps in dependencies]
        self.ready = [threading.Event() for _ in range(self.n)]
        self.stats = {'runs': 0, 'assists': 0, 'waits': 0}

        self._lock = threading.Lock()
        self._next = 0
        self._fail_pos = NO_FAILURE
        self._errors: Dict[int, BaseException] = {}

    def _reset(self) -> None:
        for flag in self.ready:
            flag.clear()
        self._next = 0
        self._fail_pos = NO_FAILURE
        self._errors = {}

    def _claim(self, only_if_ready: bool) -> int:
        """Claim the next row position, or -1. With only_if_ready, claim only a runnable row."""
        with self._lock:
            if self._next >= self.n or self._next > self._fail_pos:
                return -1
            if only_if_ready:
                row = self.order[self._next]
                if not all(self.ready[d].is_set() for d in self.dependencies[row]):
                    return -1
            pos = self._next
            self._next += 1
            return pos

    def _execute(self, pos: int, kernel: Callable[[int], None], rng) -> bool:
        row = self.order[pos]
        if rng is not None:
            time.sleep(rng.uniform(0.0, self.jitter))
        try:
            kernel(row)
        except Exception as e:
            with self._lock:
                self._errors[pos] = e
                self._fail_pos = min(self._fail_pos, pos)
            return False
        self.ready[row].set()
        return True

    def _worker(self, kernel: Callable[[int], None], worker_id: int) -> None:
        rng = None
        if self.jitter > 0:
            seed = None if self.seed is None else self.seed + worker_id
            rng = np.random.default_rng(seed)

        while True:
            pos = self._claim(only_if_ready=False)
            if pos < 0:
                return
            row = self.order[pos]
            for d in self.dependencies[row]:
                while not self.ready[d].is_set():
                    if pos > self._fail_pos:
                        return
                    assisted = self._claim(only_if_ready=True)
                    if assisted >= 0:
                        with self._lock:
                            self.stats['assists'] += 1
                        self._execute(assisted, kernel, rng)
                        continue
                    with self._lock:
                        self.stats['waits'] += 1
                    self.ready[d].wait(WAIT_SLICE_SECONDS)
            if pos > self._fail_pos:
                return
            self._execute(pos, kernel, rng)

    def run(self, kernel: Callable[[int], None]) -> None:
        """
        Run `kernel(row)` once for every row, respecting dependencies.

        Raises:
            The exception of the earliest failing row in processing order
        """
        self._reset()
        self.stats['runs'] += 1
        if self.n == 0:
            return
        threads = [threading.Thread(target=self._worker, args=(kernel, w), daemon=True)
                   for w in range(min(self.worker_count, self.n))]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        if self._errors:
            first = min(self._errors)
            self.logger.debug(f"Scheduler stopped at row {self.order[first]} "
                              f"({len(self._errors)} failing row(s))")
            raise self._errors[first]

