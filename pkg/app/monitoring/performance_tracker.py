"""
Performance tracking for pipeline stages
Wall-clock and resident memory per stage, collected for run manifests
"""
import time
import threading
from contextlib import contextmanager
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Optional

import psutil

from .logger import get_logger


@dataclass
class StageTiming:
    """Timing record of one pipeline stage"""
    name: str
    wall_seconds: float
    rss_mb_start: float
    rss_mb_end: float
    status: str = 'completed'


class PerformanceTracker:
    """Collects stage timings and custom metrics"""

    def __init__(self):
        self.logger = get_logger('performance_tracker')
        self.process = psutil.Process()
        self.stages: List[StageTiming] = []
        self.custom: Dict[str, List[float]] = {}
        self.lock = threading.Lock()

    def _rss_mb(self) -> float:
        return round(self.process.memory_info().rss / (1024 ** 2), 2)

    @contextmanager
    def stage(self, name: str):
        """Time a stage; failures are recorded with status 'failed' and re-raised"""
        start = time.perf_counter()
        rss_start = self._rss_mb()
        status = 'completed'
        self.logger.info("Stage started", stage=name, rss_mb=rss_start)
        try:
            yield
        except Exception:
            status = 'failed'
            raise
        finally:
            timing = StageTiming(
                name=name,
                wall_seconds=round(time.perf_counter() - start, 6),
                rss_mb_start=rss_start,
                rss_mb_end=self._rss_mb(),
                status=status,
            )
            with self.lock:
                self.stages.append(timing)
            self.logger.info("Stage finished", **asdict(timing))

    def record_custom_metric(self, name: str, value: float):
        with self.lock:
            self.custom.setdefault(name, []).append(float(value))

    def get_summary(self) -> Dict[str, Any]:
        """Stage timings plus min/avg/max of custom metrics"""
        with self.lock:
            custom_stats = {
                name: {
                    'count': len(values),
                    'avg': sum(values) / len(values),
                    'min': min(values),
                    'max': max(values),
                }
                for name, values in self.custom.items() if values
            }
            return {
                'stages': [asdict(s) for s in self.stages],
                'total_wall_seconds': round(sum(s.wall_seconds for s in self.stages), 6),
                'custom': custom_stats,
                'system': {
                    'cpu_count': psutil.cpu_count(),
                    'memory_total_gb': round(psutil.virtual_memory().total / (1024 ** 3), 2),
                },
            }


_performance_tracker: Optional[PerformanceTracker] = None


def get_performance_tracker() -> PerformanceTracker:
    global _performance_tracker
    if _performance_tracker is None:
        _performance_tracker = PerformanceTracker()
    return _performance_tracker
