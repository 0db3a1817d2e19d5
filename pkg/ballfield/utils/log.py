"""
Logging setup for ballfield.
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "ballfield"


def configure_logging(verbose=False, quiet=False, console=None):
    """Attach a rich handler to the package logger.

    Args:
        verbose (bool): Log at DEBUG level.
        quiet (bool): Log only warnings and errors.
        console (Console, optional): Console the handler writes to.

    Returns:
        logging.Logger: The configured package logger.
    """
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = logging.INFO

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level)

    # Re-running a command in the same process must not stack handlers
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)

    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    return logger
