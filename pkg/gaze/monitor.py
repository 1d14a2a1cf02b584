"""
Resource Monitor
Tracks wall time, CPU and memory of pipeline stages.
"""

import logging
import time
from collections import deque
from contextlib import contextmanager
from typing import Any, Deque, Dict, Iterator, List

import psutil

logger = logging.getLogger(__name__)

HIGH_USAGE_PERCENT = 80.0


class ResourceMonitor:
    """Stage timing and process resource metrics."""

    def __init__(self, max_history: int = 1000):
        self.process = psutil.Process()
        self.stage_history: Deque[Dict[str, Any]] = deque(maxlen=max_history)

    def snapshot(self) -> Dict[str, float]:
        memory = psutil.virtual_memory()
        return {
            'cpu_percent': self.process.cpu_percent(interval=None),
            'rss_mb': self.process.memory_info().rss / (1024 * 1024),
            'memory_percent': memory.percent,
        }

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a block and log its resource usage on exit."""
        self.process.cpu_percent(interval=None)
        started = time.monotonic()
        try:
            yield
        finally:
            metrics = self.snapshot()
            metrics['stage'] = name
            metrics['seconds'] = time.monotonic() - started
            self.stage_history.append(metrics)
            logger.info(
                f"Stage '{name}' took {metrics['seconds']:.2f}s "
                f"(CPU {metrics['cpu_percent']:.0f}%, RSS {metrics['rss_mb']:.0f} MB)"
            )
            if metrics['memory_percent'] > HIGH_USAGE_PERCENT:
                logger.warning(f"High memory usage - {metrics['memory_percent']:.0f}% of system memory in use")

    def get_stats(self) -> List[Dict[str, Any]]:
        return list(self.stage_history)
