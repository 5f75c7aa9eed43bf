"""
Logging module for dpp-forecaster.

Console output goes to stderr; stdout carries only the paths a command
writes. An optional rotating log file receives DEBUG records with the
originating function.
"""

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

CONSOLE_FORMAT = "%(levelname)-8s | %(name)s | %(message)s"
FILE_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logger(
    name: str = "dpp_forecaster",
    log_level: str = "INFO",
    log_file: Path | None = None,
) -> logging.Logger:
    """
    Configure the package logger for one command-line run.

    Replaces handlers from a previous call, so repeated runs in one process
    (tests, notebooks) never duplicate records.

    Args:
        name: Logger name
        log_level: One of LOG_LEVELS, case-insensitive
        log_file: Also write DEBUG records to this file (rotated at 5 MB)

    Returns:
        Configured logger instance

    Raises:
        ValueError: If log_level is not a known level name

    Example:
        logger = setup_logger("dpp_forecaster", "DEBUG", Path("runs/train.log"))
        logger.info("Training started")
    """
    level = log_level.upper()
    if level not in LOG_LEVELS:
        raise ValueError(f"Unknown log level {log_level!r}. Valid levels: {', '.join(LOG_LEVELS)}")

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file, maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8"
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)
        # file wants DEBUG even when the console is quieter
        logger.setLevel(logging.DEBUG)

    return logger


def get_logger(name: str = "dpp_forecaster") -> logging.Logger:
    """
    Get existing logger or create a new one.

    Example:
        logger = get_logger(__name__)
        logger.info("Building DPP kernel")
    """
    return logging.getLogger(name)


@contextmanager
def log_duration(logger: logging.Logger, label: str) -> Iterator[None]:
    """
    Log the wall-clock duration of a block at INFO level.

    Nothing is logged if the block raises.

    Example:
        with log_duration(logger, "train dsf"):
            train_dsf(examples, cvae, cfg)
    """
    start = time.perf_counter()
    yield
    logger.info("%s finished in %.1f s", label, time.perf_counter() - start)
