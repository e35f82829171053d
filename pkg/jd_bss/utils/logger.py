"""Logger configuration for jd-bss using loguru."""

import sys
from typing import Optional

from loguru import logger

DEFAULT_COMPONENT = "jd-bss"

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[component]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)
FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[component]} | "
    "{name}:{function}:{line} | {message}"
)


def setup_logger(
    level: str = "INFO",
    log_file: Optional[str] = None,
    format_string: Optional[str] = None,
    colorize: Optional[bool] = None,
    backtrace: bool = True,
    diagnose: bool = False,
):
    """
    Set up loguru sinks for a jd-bss run.

    The console sink writes to stderr so JSON reports printed on stdout stay
    machine-readable. Every record carries a ``component`` field, ``jd-bss``
    unless bound otherwise through ``get_logger``.

    Args:
        level: Logging level (TRACE, DEBUG, INFO, WARNING, ERROR)
        log_file: Optional log file; rotated at 10 MB and kept for 7 days
        format_string: Console format (uses ``CONSOLE_FORMAT`` if None)
        colorize: Force or disable colors; None colors only a terminal
        backtrace: Whether to extend tracebacks beyond the catching frame
        diagnose: Whether to show variable values in tracebacks (large arrays)
    """
    logger.remove()
    logger.configure(extra={"component": DEFAULT_COMPONENT})

    logger.add(
        sys.stderr,
        format=format_string or CONSOLE_FORMAT,
        level=level,
        colorize=colorize,
        backtrace=backtrace,
        diagnose=diagnose,
    )

    if log_file:
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=level,
            rotation="10 MB",
            retention="7 days",
            compression="gz",
            backtrace=backtrace,
            diagnose=diagnose,
        )
        logger.info(f"Logging to file: {log_file}")

    logger.debug(f"Logger initialized with level: {level}")


def get_logger(component: str = DEFAULT_COMPONENT):
    """
    Get a logger whose records are tagged with a component name.

    Args:
        component: Name shown in the ``component`` column, e.g. a CLI command

    Returns:
        Logger instance
    """
    return logger.bind(component=component)
