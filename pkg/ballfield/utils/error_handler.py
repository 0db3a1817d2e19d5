"""
Error handling utilities for ballfield.
"""

import functools
import logging

from rich.console import Console

logger = logging.getLogger(__name__)


class BallFieldError(Exception):
    """Base exception for ballfield."""
    pass


class DomainError(BallFieldError, ValueError):
    """Raised when an argument lies outside its mathematical domain."""
    pass


class ConfigurationError(BallFieldError):
    """Raised when configuration is invalid or missing."""
    pass


class DimensionMismatchError(BallFieldError, ValueError):
    """Raised when array shapes disagree (factor vs grid, white vector length)."""
    pass


class NotPositiveDefiniteError(BallFieldError):
    """Raised when a Cholesky factorization fails after all jitter retries."""
    pass


class IndefiniteMatrixError(BallFieldError):
    """Raised when a covariance matrix has a significantly negative eigenvalue."""
    pass


class GridError(BallFieldError):
    """Raised when a slice or point set is inconsistent with its grid."""
    pass


class InsufficientEnsembleError(BallFieldError):
    """Raised when an ensemble is too small for meaningful standard errors."""
    pass


class FieldFormatError(BallFieldError):
    """Raised when a field, report or manifest file is malformed."""
    pass


class ValidationFailedError(BallFieldError):
    """Raised when a covariance report does not pass its tolerance."""
    pass


# Exit codes of the command line contract
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3

_EXIT_CODES = (
    (ValidationFailedError, EXIT_FAILED),
    (ConfigurationError, EXIT_CONFIG),
    (DomainError, EXIT_CONFIG),
    (GridError, EXIT_CONFIG),
    (InsufficientEnsembleError, EXIT_CONFIG),
    (DimensionMismatchError, EXIT_CONFIG),
    (NotPositiveDefiniteError, EXIT_CONFIG),
    (IndefiniteMatrixError, EXIT_CONFIG),
    (FieldFormatError, EXIT_IO),
    (OSError, EXIT_IO),
)


def exit_code_for(error):
    """Map an exception to the command line exit code.

    Args:
        error (BaseException): The raised exception.

    Returns:
        int: Exit code (1 for anything not covered by the contract).
    """
    for error_type, code in _EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_FAILED


def handle_exceptions(func=None, *, console=None):
    """Decorator to turn exceptions into console messages and exit codes.

    Args:
        func: The function to wrap.
        console (Console, optional): Console used for error output.

    Returns:
        The wrapped function. It raises SystemExit with the contract code
        when the wrapped call fails.
    """
    def decorate(inner):
        @functools.wraps(inner)
        def wrapper(*args, **kwargs):
            out = console or Console(stderr=True)
            try:
                return inner(*args, **kwargs)
            except BallFieldError as e:
                out.print(f"[bold red]Error:[/bold red] {str(e)}")
                raise SystemExit(exit_code_for(e))
            except OSError as e:
                out.print(f"[bold red]I/O error:[/bold red] {str(e)}")
                raise SystemExit(EXIT_IO)
            except Exception as e:
                logger.debug("Unexpected error", exc_info=True)
                out.print(f"[bold red]Unexpected error:[/bold red] {str(e)}")
                raise SystemExit(EXIT_FAILED)

        return wrapper

    if func is None:
        return decorate
    return decorate(func)
