"""
Error handlers for the command-line interface
Maps exceptions to exit codes, logs them and records them with the error reporter
"""

import traceback
from datetime import datetime
from typing import Any, Dict, Optional, Tuple, Type

from .errors import (CacheInvalidError, ConfigurationError, DegenerateInputError,
                     MissingDependencyError, ModelInvalidError, ParameterError, ParseError,
                     TrainingError)
from .monitoring import get_error_reporter, get_logger

logger = get_logger('error_handlers')

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_MODEL = 4
EXIT_MISSING_DEPENDENCY = 5

# Checked in order; the first matching class decides
EXIT_CODES: Tuple[Tuple[Type[BaseException], int, str], ...] = (
    (MissingDependencyError, EXIT_MISSING_DEPENDENCY, 'Missing Dependency'),
    (ParseError, EXIT_PARSE, 'Parse Error'),
    (CacheInvalidError, EXIT_PARSE, 'Stale Artifact'),
    (ParameterError, EXIT_USAGE, 'Invalid Parameter'),
    (ConfigurationError, EXIT_USAGE, 'Invalid Configuration'),
    (ModelInvalidError, EXIT_MODEL, 'Invalid Model'),
    (DegenerateInputError, EXIT_MODEL, 'Degenerate Input'),
    (TrainingError, EXIT_MODEL, 'Training Failed'),
)


def exit_code_for(error: BaseException) -> int:
    return classify(error)[0]


def classify(error: BaseException) -> Tuple[int, str]:
    for error_class, code, title in EXIT_CODES:
        if isinstance(error, error_class):
            return code, title
    return EXIT_UNEXPECTED, 'Unexpected Error'


def create_error_response(error: BaseException, command: Optional[str] = None) -> Dict[str, Any]:
    """Structured description of a failed command, printed to stderr as JSON"""
    code, title = classify(error)
    response = {
        'error': title,
        'message': str(error),
        'exit_code': code,
        'timestamp': datetime.now().isoformat(),
    }
    if command:
        response['command'] = command
    context = getattr(error, 'context', None)
    if context:
        response['details'] = context
    producer = getattr(error, 'producer', None)
    if producer:
        response['producer'] = producer
    return response


def handle_error(error: BaseException, command: Optional[str] = None) -> Dict[str, Any]:
    """Log and report an error escaping a command; returns the response with its exit code"""
    code, title = classify(error)
    if code == EXIT_UNEXPECTED:
        error_id = get_error_reporter().report_error(
            'unexpected_error', str(error),
            {'command': command, 'error_type': type(error).__name__,
             'traceback': traceback.format_exc()})
        logger.critical("Unexpected error", command=command, error_id=error_id,
                        error_type=type(error).__name__, exception=error)
    else:
        error_id = get_error_reporter().report_exception(error, {'command': command})
        logger.error(title, command=command, error_id=error_id, exit_code=code,
                     error_message=str(error))
    response = create_error_response(error, command)
    response['error_id'] = error_id
    return response
