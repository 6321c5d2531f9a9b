"""
Utilities package for the GFSID framework
"""

from .logger import setup_logging, get_logger
from .error_handler import (
    GfsidError,
    DimensionMismatchError,
    DegenerateVectorError,
    NumericalError,
    ConfigError,
    DataFormatError,
    CheckpointError,
    EpisodeSpecError,
    SplitMismatchError,
    cli_error_handler,
    safe_execute,
)

__all__ = [
    'setup_logging',
    'get_logger',
    'GfsidError',
    'DimensionMismatchError',
    'DegenerateVectorError',
    'NumericalError',
    'ConfigError',
    'DataFormatError',
    'CheckpointError',
    'EpisodeSpecError',
    'SplitMismatchError',
    'cli_error_handler',
    'safe_execute',
]
