"""
Process settings for the RFS forensics toolkit
Environment variables (optionally from a .env file) with validated defaults
"""

import os
from pathlib import Path
from typing import Any, Dict, List

from dotenv import load_dotenv

from .errors import ConfigurationError


class Settings:
    """Process-level settings; experiment parameters live in ExperimentConfig"""

    DEFAULT_LOG_DIR = 'logs'
    DEFAULT_LOG_LEVEL = 'INFO'
    DEFAULT_OUTPUT_DIR = './runs'
    MAX_DEFAULT_WORKERS = 8
    LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

    def __init__(self, environ: Dict[str, str] = None):
        """
        Initialize settings

        Args:
            environ: Mapping to read from (uses os.environ after loading .env if not provided)
        """
        if environ is None:
            load_dotenv()
            environ = dict(os.environ)
        self._load_configuration(environ)
        self._validate_configuration()

    def _load_configuration(self, environ: Dict[str, str]):
        self._errors: List[str] = []
        default_workers = min(os.cpu_count() or 1, self.MAX_DEFAULT_WORKERS)
        raw_workers = environ.get('RFS_WORKERS', str(default_workers))
        try:
            self.workers = int(raw_workers)
        except ValueError:
            self._errors.append(f"RFS_WORKERS must be an integer, got {raw_workers!r}")
            self.workers = default_workers

        self.log_dir = environ.get('RFS_LOG_DIR', self.DEFAULT_LOG_DIR)
        self.log_level = environ.get('RFS_LOG_LEVEL', self.DEFAULT_LOG_LEVEL).upper()
        self.output_dir = environ.get('RFS_OUTPUT_DIR', self.DEFAULT_OUTPUT_DIR)
        self.feature_cache_dir = environ.get(
            'RFS_FEATURE_CACHE', str(Path(self.output_dir) / 'feature_cache'))

    def _validate_configuration(self):
        """Collect every problem, then raise once"""
        errors = list(self._errors)
        if self.workers < 1:
            errors.append("RFS_WORKERS must be at least 1")
        if self.log_level not in self.LOG_LEVELS:
            errors.append(f"RFS_LOG_LEVEL must be one of {', '.join(self.LOG_LEVELS)}")
        if not self.log_dir:
            errors.append("RFS_LOG_DIR cannot be empty")
        if not self.output_dir:
            errors.append("RFS_OUTPUT_DIR cannot be empty")
        if errors:
            raise ConfigurationError(f"Settings validation failed: {'; '.join(errors)}")

    def get_summary(self) -> Dict[str, Any]:
        """Settings snapshot for run manifests"""
        return {
            'workers': self.workers,
            'log_dir': self.log_dir,
            'log_level': self.log_level,
            'output_dir': self.output_dir,
            'feature_cache_dir': self.feature_cache_dir,
        }


# Global settings instance
settings = Settings()
