"""
Utility functions for the CMixer workbench
Includes logging setup and small shared helpers.
"""

import logging
import os
import sys

from config import LOGGING_CONFIG
from .errors import ValidationError

# Global logger instance
_logger = None


def setup_logging(log_file=None, level=None, console=False):
    """
    Configure logging for the workbench.

    Args:
        log_file: Path to log file (default: LOGGING_CONFIG['file'])
        level: Logging level name or number (default: LOGGING_CONFIG['level'])
        console: Also log INFO and above to stderr

    Returns:
        Configured logger instance
    """
    global _logger

    if _logger is not None:
        if console and not any(isinstance(h, logging.StreamHandler)
                               and not isinstance(h, logging.FileHandler)
                               for h in _logger.handlers):
            _logger.addHandler(_console_handler())
        return _logger

    log_file = log_file or LOGGING_CONFIG['file']
    level = level or LOGGING_CONFIG['level']

    _logger = logging.getLogger('cmixer_workbench')
    _logger.setLevel(level)

    # Prevent duplicate handlers
    if _logger.handlers:
        return _logger

    detailed_formatter = logging.Formatter(
        LOGGING_CONFIG['format'],
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(level)
    file_handler.setFormatter(detailed_formatter)
    _logger.addHandler(file_handler)

    if console:
        _logger.addHandler(_console_handler())

    return _logger


def _console_handler():
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter('%(levelname)s - %(message)s'))
    return handler


def get_logger():
    """
    Get the workbench logger instance.

    Returns:
        Logger instance (creates one if not exists)
    """
    global _logger
    if _logger is None:
        return setup_logging()
    return _logger


def worker_count():
    """
    Number of worker threads allowed by the CMIXER_THREADS environment variable.

    Returns:
        Positive integer, 1 when unset or invalid
    """
    raw = os.environ.get('CMIXER_THREADS', '').strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        get_logger().warning(f"Ignoring non-integer CMIXER_THREADS={raw!r}")
        return 1
    return max(1, value)


def parse_known_size(text):
    """
    Parse a known-subset size written as "TxC" (antennas x subcarriers).

    Args:
        text: String such as "5x5"

    Returns:
        Tuple (n_t0, n_c0)

    Raises:
        ValidationError: If the text is not two positive integers separated by 'x'
    """
    parts = text.lower().strip().split('x')
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        log_error(f"Malformed known size '{text}'")
        raise ValidationError(f"Known size must look like '5x5', got '{text}'.")
    n_t0, n_c0 = (int(p) for p in parts)
    if n_t0 < 1 or n_c0 < 1:
        log_error(f"Non-positive known size '{text}'")
        raise ValidationError(f"Known size must be positive, got '{text}'.")
    return n_t0, n_c0


def log_error(message, exception=None):
    """
    Log an error message with optional exception.

    Args:
        message: Error message
        exception: Exception object (optional)
    """
    logger = get_logger()
    if exception:
        logger.error(f"{message}: {str(exception)}", exc_info=True)
    else:
        logger.error(message)


def log_warning(message):
    """
    Log a warning message.

    Args:
        message: Warning message
    """
    get_logger().warning(message)
