"""
Centralized error handling for the library and the CLI
"""
from functools import wraps
from typing import Any, Callable, Optional, Tuple

import typer

from utils.logger import get_logger

logger = get_logger(__name__)


class GfsidError(Exception):
    """Base class for every domain error raised by this package."""


class DimensionMismatchError(GfsidError):
    """Operand shapes are incompatible."""

    def __init__(self, op: str, left: Tuple[int, ...], right: Tuple[int, ...]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")


class DegenerateVectorError(GfsidError):
    """A vector's norm is below EPSILON_NORM."""


class NumericalError(GfsidError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(GfsidError):
    """Invalid configuration or flag combination."""


class DataFormatError(GfsidError):
    """A dataset, manifest or embedding file does not parse."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class CheckpointError(GfsidError):
    """Checkpoint bytes are corrupt, truncated or of an unknown version."""


class EpisodeSpecError(GfsidError):
    """An episodic evaluation spec cannot be satisfied by the split."""


class SplitMismatchError(GfsidError):
    """Reports that must share a split were computed on different ones."""


def cli_error_handler(func: Callable) -> Callable:
    """
    Decorator for CLI commands.

    Domain errors are logged with their traceback and turned into a one-line
    diagnostic plus exit code 1. Usage errors raised by typer/click pass through
    untouched and keep their exit code 2.

    Example:
        @app.command()
        @cli_error_handler
        def train(...):
            ...
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)

        except GfsidError as e:
            logger.error(
                f"Error in command '{func.__name__}'",
                exc_info=True
            )
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=1)

    return wrapper


def safe_execute(func: Callable, *args, **kwargs) -> Tuple[bool, Any, Optional[str]]:
    """
    Safely execute a function and return result or error.

    Args:
        func: Function to execute
        *args: Positional arguments for the function
        **kwargs: Keyword arguments for the function

    Returns:
        Tuple of (success: bool, result: any, error: str)
    """
    try:
        result = func(*args, **kwargs)
        return True, result, None

    except Exception as e:

        logger.error(
            f"Error executing {getattr(func, '__name__', repr(func))}",
            exc_info=True
        )

        return False, None, str(e)
