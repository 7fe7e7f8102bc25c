"""
Exception hierarchy for the RFS forensics toolkit
Every error raised by the library derives from RfsError so the CLI can map it to an exit code
"""

from typing import Any, Dict, Optional


class RfsError(Exception):
    """Base class for all library errors"""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = dict(context or {})

    def with_context(self, **kwargs) -> 'RfsError':
        """Attach task coordinates (k, repetition, map seed...) and return self"""
        self.context.update(kwargs)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ', '.join(f"{key}={value}" for key, value in sorted(self.context.items()))
        return f"{self.message} ({details})"


class ParameterError(RfsError, ValueError):
    """Invalid argument value or dimension mismatch"""


class ModelInvalidError(RfsError):
    """Covariance not positive definite, failed Cholesky, singular solve"""


class DegenerateInputError(RfsError):
    """Zero vectors, zero denominators, degenerate detectors"""


class CacheInvalidError(RfsError):
    """A cached artifact no longer matches the data it was built from"""


class ParseError(RfsError):
    """Malformed file: PGM payload, model JSON, map JSON or config JSON"""

    def __init__(self, message: str, offset: Optional[int] = None, field: Optional[str] = None,
                 context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.offset = offset
        self.field = field
        if offset is not None:
            self.context.setdefault('byte_offset', offset)
        if field is not None:
            self.context.setdefault('field', field)


class TrainingError(RfsError):
    """SVM training could not produce a model"""


class AttackStalledError(RfsError):
    """Attack cannot make progress (vanishing gradient, no improving pixel)"""

    def __init__(self, message: str, iterations: int = 0, context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.iterations = iterations


class UndefinedMetricError(RfsError):
    """Metric is undefined for the given inputs (e.g. zero distortion)"""


class ConfigurationError(RfsError):
    """Settings or experiment configuration failed validation"""


class MissingDependencyError(RfsError):
    """A recipe prerequisite is missing and auto-build is disabled"""

    def __init__(self, message: str, producer: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.producer = producer
        self.context.setdefault('produced_by', producer)


class ConvergenceWarning(UserWarning):
    """Trainer stopped at its iteration cap; the best-so-far model is returned"""
