"""
Error reporting for experiment runs
Counts errors per type, keeps a bounded history and exports a JSON report next to the run manifest
"""
import json
import time
from collections import defaultdict, deque
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Optional

from .logger import get_logger


class ErrorReporter:
    """Thread-safe error bookkeeping shared by workers of a run"""

    def __init__(self, history_size: int = 100):
        self.logger = get_logger('error_reporter')
        self.error_counts: Dict[str, int] = defaultdict(int)
        self.error_history = defaultdict(lambda: deque(maxlen=history_size))
        self.lock = Lock()

    def report_error(self, error_type: str, message: str,
                     context: Optional[Dict[str, Any]] = None) -> str:
        """Record an error; returns an id of the form <type>-<count>"""
        with self.lock:
            self.error_counts[error_type] += 1
            count = self.error_counts[error_type]
            self.error_history[error_type].append({
                'timestamp': time.time(),
                'message': message,
                'context': context or {},
            })

        self.logger.error(f"Error reported: {error_type}",
                          error_type=error_type,
                          error_message=message,
                          context=context,
                          total_count=count)
        return f"{error_type}-{count}"

    def report_exception(self, exception: BaseException,
                         context: Optional[Dict[str, Any]] = None) -> str:
        merged = dict(getattr(exception, 'context', {}) or {})
        merged.update(context or {})
        return self.report_error(type(exception).__name__, str(exception), merged)

    def get_error_statistics(self) -> Dict[str, Any]:
        with self.lock:
            sorted_errors = sorted(self.error_counts.items(), key=lambda x: x[1], reverse=True)
            return {
                'total_errors': dict(self.error_counts),
                'error_types': sorted(self.error_counts.keys()),
                'top_errors': sorted_errors[:10],
            }

    def export_error_report(self, filepath: str) -> bool:
        """Write all recorded errors to a JSON file"""
        try:
            with self.lock:
                report = {
                    'generated_at': time.strftime('%Y-%m-%d %H:%M:%S UTC', time.gmtime()),
                    'error_summary': dict(self.error_counts),
                    'detailed_errors': {
                        error_type: [
                            {
                                'timestamp': time.strftime('%Y-%m-%d %H:%M:%S UTC',
                                                           time.gmtime(e['timestamp'])),
                                'message': e['message'],
                                'context': e['context'],
                            }
                            for e in history
                        ]
                        for error_type, history in self.error_history.items()
                    },
                }
            Path(filepath).parent.mkdir(parents=True, exist_ok=True)
            with open(filepath, 'w') as f:
                json.dump(report, f, indent=2, default=str)
            self.logger.info(f"Error report exported to {filepath}")
            return True
        except OSError as e:
            self.logger.error("Failed to export error report", exception=e)
            return False

    def reset(self):
        with self.lock:
            self.error_counts.clear()
            self.error_history.clear()


_error_reporter: Optional[ErrorReporter] = None


def get_error_reporter() -> ErrorReporter:
    """Process-wide reporter instance"""
    global _error_reporter
    if _error_reporter is None:
        _error_reporter = ErrorReporter()
    return _error_reporter
