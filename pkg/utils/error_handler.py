"""
Error handling framework for seriestable.
"""

import logging
import traceback
from typing import Callable, Any, Optional
from functools import wraps

logger = logging.getLogger('seriestable.error_handler')


class SeriesTableError(Exception):
    """Base exception for seriestable."""
    pass


class DatasetError(SeriesTableError):
    """Error while loading or validating a dataset."""
    pass


class TsFormatError(DatasetError):
    """A `.ts` file violates the accepted grammar."""

    def __init__(self, message: str, path: Optional[str] = None, line_no: Optional[int] = None):
        self.path = path
        self.line_no = line_no
        location = ""
        if path is not None:
            location = f"{path}:{line_no}: " if line_no is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class DatasetCardError(DatasetError):
    """Dataset card is missing or does not cover the dataset."""
    pass


class DatasetNotFoundError(DatasetError):
    """Dataset files could not be located."""
    pass


class ConfigurationError(SeriesTableError):
    """Error in configuration operations."""
    pass


class MetricError(SeriesTableError):
    """Distance could not be computed for the given inputs."""
    pass


class RetrievalError(SeriesTableError):
    """Neighbor or negative retrieval request cannot be satisfied."""
    pass


class ClusterError(SeriesTableError):
    """K-means request cannot be satisfied."""
    pass


class TableFormatError(SeriesTableError):
    """Unknown table format or malformed serialized table."""
    pass


class BackendError(SeriesTableError):
    """Error in completion backend operations."""
    pass


class HardBackendError(BackendError):
    """Backend failure that aborts a whole run."""
    pass


class BackendAuthError(HardBackendError):
    """Missing or rejected credentials."""
    pass


class BackendConfigError(HardBackendError):
    """Backend cannot be constructed from the given configuration."""
    pass


class TransientBackendError(BackendError):
    """Retryable failure (rate limit, 5xx, dropped connection)."""

    def __init__(self, message: str, status: Optional[int] = None):
        self.status = status
        super().__init__(message)


class BackendNetworkError(BackendError):
    """Transient failures persisted after every retry."""
    pass


class BackendTimeoutError(BackendError):
    """Request exceeded the configured timeout after every retry."""
    pass


class ContextLengthError(BackendError):
    """Backend rejected the prompt as too long."""
    pass


class EnsembleError(SeriesTableError):
    """No usable inference path."""
    pass


class EvaluationError(SeriesTableError):
    """Records or result tables cannot be scored."""
    pass


def handle_errors(
    fallback_return: Any = None,
    exception_types: tuple = (Exception,)
):
    """
    Decorator to handle exceptions gracefully.

    Args:
        fallback_return: Value to return on error
        exception_types: Types of exceptions to catch
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except exception_types as e:
                if isinstance(e, SeriesTableError):
                    logger.error(f"{func.__name__} failed: {e}")
                else:
                    logger.error(f"Unexpected error in {func.__name__}: {e}")
                logger.debug(f"Full traceback: {traceback.format_exc()}")
                return fallback_return
        return wrapper
    return decorator


class ErrorContext:
    """Context manager that logs and suppresses errors."""

    def __init__(self, operation: str):
        self.operation = operation
        self.error: Optional[BaseException] = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is not None and issubclass(exc_type, Exception):
            self.error = exc_val
            logger.error(f"Error in {self.operation}: {exc_val}")
            return True
        return False
