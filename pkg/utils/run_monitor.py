"""
Run monitor — phase timings plus process RSS and Python heap for game reports.
"""

from __future__ import annotations

import logging
import time
import tracemalloc
from contextlib import contextmanager
from typing import Dict, Iterator

try:
    import psutil
except Exception:  # pragma: no cover - optional dependency
    psutil = None


logger = logging.getLogger('batchbound.monitor')


class RunMonitor:
    """Collect wall-clock seconds per named phase of a session."""

    def __init__(self, *, trace_memory: bool = False, trace_depth: int = 10):
        self.timings: Dict[str, float] = {}
        self._process = psutil.Process() if psutil else None
        self._tracing = trace_memory
        if trace_memory and not tracemalloc.is_tracing():
            tracemalloc.start(trace_depth)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug(f"Phase {name} took {elapsed:.3f}s")

    def rss_mib(self) -> float | None:
        if self._process is None:
            return None
        try:
            return self._process.memory_info().rss / (1024 * 1024)
        except Exception:
            return None

    def snapshot(self) -> Dict[str, float]:
        """Timings plus memory figures, ready to embed in a report."""
        data = {name: round(seconds, 6) for name, seconds in self.timings.items()}
        data["total"] = round(sum(self.timings.values()), 6)
        rss = self.rss_mib()
        if rss is not None:
            data["rss_mib"] = round(rss, 1)
        if self._tracing and tracemalloc.is_tracing():
            _, peak = tracemalloc.get_traced_memory()
            data["py_peak_mib"] = round(peak / (1024 * 1024), 1)
        logger.debug(
            "Run snapshot | total=%.3fs | rss=%s",
            data["total"], f"{rss:.1f} MiB" if rss is not None else "n/a",
        )
        return data
