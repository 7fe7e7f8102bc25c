"""
Structured logging
JSON records with bound run context, one logger instance per component
"""
import json
import logging
import os
import time
import traceback
from datetime import datetime, timezone
from functools import wraps
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..settings import settings


def _json_default(value: Any) -> Any:
    """Make numpy scalars, arrays, paths and enums serializable"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, 'value') and hasattr(value, 'name'):
        return value.value
    return str(value)


class StructuredLogger:
    """Structured logger with JSON output and context support"""

    def __init__(self, name: str, log_dir: Optional[str] = None, level: Optional[str] = None):
        self.name = name
        self.log_dir = Path(log_dir or settings.log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger(f"rfs.{name}")
        self.logger.setLevel(getattr(logging, (level or settings.log_level).upper(), logging.INFO))
        self.logger.propagate = False

        # Avoid duplicate handlers
        if not self.logger.handlers:
            self._setup_handlers()

        self.context: Dict[str, Any] = {}

    def _setup_handlers(self):
        """Console handler plus rotating structured files"""
        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.WARNING)
        console_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        ))
        self.logger.addHandler(console_handler)

        file_formatter = StructuredFormatter()

        file_handler = RotatingFileHandler(
            self.log_dir / f"{self.name}.log", maxBytes=10 * 1024 * 1024, backupCount=5
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(file_formatter)
        self.logger.addHandler(file_handler)

        error_handler = RotatingFileHandler(
            self.log_dir / f"{self.name}_errors.log", maxBytes=5 * 1024 * 1024, backupCount=3
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(file_formatter)
        self.logger.addHandler(error_handler)

    def set_context(self, **kwargs):
        """Bind fields (run id, recipe, master seed) to every following record"""
        self.context.update(kwargs)

    def clear_context(self):
        self.context.clear()

    def _create_log_entry(self, level: str, message: str, **kwargs) -> Dict[str, Any]:
        entry = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'level': level,
            'logger': self.name,
            'message': message,
            'process_id': os.getpid(),
        }
        entry.update(self.context)
        entry.update(kwargs)
        return entry

    def _emit(self, method, level: str, message: str, exception: Optional[BaseException] = None,
              **kwargs):
        entry = self._create_log_entry(level, message, **kwargs)
        if exception is not None:
            entry['exception'] = {
                'type': type(exception).__name__,
                'message': str(exception),
                'traceback': ''.join(traceback.format_exception(
                    type(exception), exception, exception.__traceback__)),
            }
        method(json.dumps(entry, default=_json_default))

    def debug(self, message: str, **kwargs):
        self._emit(self.logger.debug, 'DEBUG', message, **kwargs)

    def info(self, message: str, **kwargs):
        self._emit(self.logger.info, 'INFO', message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._emit(self.logger.warning, 'WARNING', message, **kwargs)

    def error(self, message: str, exception: Optional[BaseException] = None, **kwargs):
        self._emit(self.logger.error, 'ERROR', message, exception=exception, **kwargs)

    def critical(self, message: str, exception: Optional[BaseException] = None, **kwargs):
        self._emit(self.logger.critical, 'CRITICAL', message, exception=exception, **kwargs)


class StructuredFormatter(logging.Formatter):
    """Pass JSON records through, wrap plain records into JSON"""

    def format(self, record):
        message = record.getMessage()
        try:
            json.loads(message)
            return message
        except (json.JSONDecodeError, ValueError):
            return json.dumps({
                'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
                'level': record.levelname,
                'logger': record.name,
                'message': message,
                'module': record.module,
                'function': record.funcName,
                'line': record.lineno,
                'process_id': os.getpid(),
            })


_loggers: Dict[str, StructuredLogger] = {}


def get_logger(name: str = 'rfs') -> StructuredLogger:
    """Fetch or create the logger for a component"""
    if name not in _loggers:
        _loggers[name] = StructuredLogger(name)
    return _loggers[name]


def log_performance(operation: str):
    """Decorator logging duration and status of a call"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger('performance')
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(f"Operation failed: {operation}",
                             operation=operation,
                             duration=time.perf_counter() - start_time,
                             status='error',
                             exception=e)
                raise
            logger.info(f"Operation completed: {operation}",
                        operation=operation,
                        duration=time.perf_counter() - start_time,
                        status='success')
            return result
        return wrapper
    return decorator
