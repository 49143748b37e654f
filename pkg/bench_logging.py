#!/usr/bin/env python3
"""
Benchmark Logging Helpers

Provides:
- setup_logging: root logger with file + stream handlers
- emit_progress_json: one JSON line per processed system on stdout
  (enabled with ENABLE_JSON_PROGRESS=true, logs then go to stderr)
- SystemEventLog: bounded in-memory event buffer keyed by system index,
  per-level counters and a persistent log file
"""

import json
import logging
import math
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

# Configuration
LOG_BUFFER_SIZE = 1000
DEFAULT_LOG_FILE = 'refactor_bench.log'
ENABLE_JSON_PROGRESS = os.getenv('ENABLE_JSON_PROGRESS', '').lower() == 'true'
EVENT_LEVELS = ('info', 'warning', 'error')


def setup_logging(log_level: str, log_file: Optional[str] = DEFAULT_LOG_FILE, to_stderr: bool = False) -> None:
    """
    Setup logging configuration.

    Args:
        log_level: DEBUG, INFO, WARNING or ERROR
        log_file: File handler target; None disables the file handler
        to_stderr: Send the stream handler to stderr (stdout carries a report)
    """
    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f'Invalid log level: {log_level}')

    # When JSON progress is enabled, send logs to stderr to keep stdout clean for JSON
    stream_handler = logging.StreamHandler(sys.stderr if (ENABLE_JSON_PROGRESS or to_stderr) else sys.stdout)
    handlers: List[logging.Handler] = [stream_handler]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))

    logging.basicConfig(
        level=numeric_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def emit_progress_json(system: int, status: str, percent: float, total_systems: int = 0,
                       time_elapsed: float = 0.0, relres: Optional[float] = None,
                       refine_iters: int = 0) -> None:
    """
    Emit progress information as JSON to stdout for machine consumption.

    Args:
        system: Index of the system just processed
        status: solved | failed | reanalyzed | regularized
        percent: Fraction of the sequence done (0.0 to 1.0)
        total_systems: Sequence length
        time_elapsed: Seconds since the run started
        relres: Final relative residual of the system
        refine_iters: Refinement iterations spent
    """
    if ENABLE_JSON_PROGRESS:
        progress_data = {
            "type": "progress",
            "system": system,
            "status": status,
            "percent": percent,
            "total_systems": total_systems,
            "time_elapsed": round(time_elapsed, 3),
            "relres": relres if relres is not None and math.isfinite(relres) else None,
            "refine_iters": refine_iters,
        }
        print(json.dumps(progress_data), flush=True)


class SystemEventLog:
    """Policy events (analysis, retries, failures) recorded per system index."""

    def __init__(self, name: str = 'refactor_bench', log_file: Optional[Union[str, Path]] = None,
                 max_entries: int = LOG_BUFFER_SIZE):
        self.name = name
        self.max_entries = max_entries
        self.entries: List[Dict[str, Any]] = []
        self.system_events: Dict[int, List[Dict[str, Any]]] = {}
        self.log_file = Path(log_file) if log_file else None
        self.stats = {'info': 0, 'warning': 0, 'error': 0, 'total': 0}
        self.logger = logging.getLogger(__name__)

    def add_event(self, system: int, event: str, message: str = "", level: str = 'info') -> Dict[str, Any]:
        """Record one event for `system` and mirror it to the Python logger."""
        level = level.lower()
        if level not in EVENT_LEVELS:
            raise ValueError(f'Invalid event level: {level}')
        entry = {
            'timestamp': datetime.now().strftime("%H:%M:%S.%f")[:-3],
            'system': system,
            'event': event,
            'level': level.upper(),
            'message': message,
        }
        self.entries.append(entry)
        self.stats[level] += 1
        self.stats['total'] += 1

        events = self.system_events.setdefault(system, [])
        events.append(entry)
        if len(events) > self.max_entries:
            events.pop(0)
        if len(self.entries) > self.max_entries:
            self.entries.pop(0)

        getattr(self.logger, 'warning' if level == 'warning' else level)(
            f"[system {system}] {event}{': ' + message if message else ''}")

        if self.log_file:
            try:
                with open(self.log_file, 'a', encoding='utf-8') as f:
                    f.write(f"[{entry['timestamp']}] [system {system}] {entry['level']}: {event} {message}\n")
            except OSError as e:
                self.logger.debug(f"Could not append to {self.log_file}: {e}")
        return entry

    def events_for(self, system: int) -> List[str]:
        """Event names recorded for one system, oldest first."""
        return [entry['event'] for entry in self.system_events.get(system, [])]

    def count(self, event: str) -> int:
        return sum(1 for entry in self.entries if entry['event'] == event)

    def clear(self) -> None:
        self.entries.clear()
        self.system_events.clear()
        self.stats = {'info': 0, 'warning': 0, 'error': 0, 'total': 0}
