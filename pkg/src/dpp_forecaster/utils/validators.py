"""
Validation module for dpp-forecaster.

Provides configuration and input validation functions. Every validator
returns a tuple of (is_valid, error_message); `ensure_valid` turns a failed
result into a ConfigurationError for callers that cannot continue.
"""

import math
from collections.abc import Iterable, Sequence
from pathlib import Path

from dpp_forecaster.errors import ConfigurationError
from dpp_forecaster.utils.logger import get_logger

logger = get_logger(__name__)

PROBABILITY_SUM_TOLERANCE = 1e-12


def ensure_valid(result: tuple[bool, str | None]) -> None:
    """
    Raise ConfigurationError if a validator result is negative.

    Args:
        result: Tuple returned by one of the validate_* functions

    Raises:
        ConfigurationError: If the result is (False, message)

    Example:
        ensure_valid(validate_positive(cfg.speed, "speed"))
    """
    is_valid, error = result
    if not is_valid:
        raise ConfigurationError(error or "Invalid configuration")


def validate_positive(value: float, name: str) -> tuple[bool, str | None]:
    """
    Validate that a real parameter is finite and strictly positive.

    Args:
        value: Value to check
        name: Parameter name used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(value, int | float) or isinstance(value, bool):
        return False, f"{name} must be a number, got {value!r}"
    if not math.isfinite(value) or value <= 0:
        return False, f"{name} must be a finite positive number, got {value}"
    return True, None


def validate_non_negative(value: float, name: str) -> tuple[bool, str | None]:
    """
    Validate that a real parameter is finite and non-negative.

    Args:
        value: Value to check
        name: Parameter name used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(value, int | float) or isinstance(value, bool):
        return False, f"{name} must be a number, got {value!r}"
    if not math.isfinite(value) or value < 0:
        return False, f"{name} must be a finite non-negative number, got {value}"
    return True, None


def validate_positive_int(value: int, name: str) -> tuple[bool, str | None]:
    """
    Validate that a count parameter is a positive integer.

    Args:
        value: Value to check
        name: Parameter name used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        return False, f"{name} must be a positive integer, got {value!r}"
    return True, None


def validate_unit_interval(value: float, name: str) -> tuple[bool, str | None]:
    """
    Validate that a value lies in the open interval (0, 1).

    Used for Adam decay rates.

    Args:
        value: Value to check
        name: Parameter name used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(value, int | float) or not 0.0 < value < 1.0:
        return False, f"{name} must lie in (0, 1), got {value!r}"
    return True, None


def validate_percentile(rho: float) -> tuple[bool, str | None]:
    """
    Validate a percentile in the open interval (0, 100).

    Args:
        rho: Percentile of prior mass enclosed by the quality sphere

    Returns:
        Tuple of (is_valid, error_message)

    Example:
        is_valid, error = validate_percentile(90.0)
    """
    if not isinstance(rho, int | float) or not 0.0 < rho < 100.0:
        return False, f"Percentile must lie in (0, 100), got {rho!r}"
    return True, None


def validate_probabilities(
    probs: Sequence[float], expected_length: int
) -> tuple[bool, str | None]:
    """
    Validate a categorical distribution.

    Checks:
    - Length matches the number of categories
    - Every entry is finite and non-negative
    - Entries sum to 1 within PROBABILITY_SUM_TOLERANCE

    Args:
        probs: Probabilities to check
        expected_length: Number of categories

    Returns:
        Tuple of (is_valid, error_message)
    """
    if len(probs) != expected_length:
        return False, f"Expected {expected_length} probabilities, got {len(probs)}"

    for p in probs:
        if not math.isfinite(p) or p < 0:
            return False, f"Probabilities must be non-negative, got {list(probs)}"

    total = math.fsum(probs)
    if abs(total - 1.0) > PROBABILITY_SUM_TOLERANCE:
        return False, f"Probabilities must sum to 1, got {total!r}"

    return True, None


def validate_choice(
    value: str, choices: Iterable[str], name: str
) -> tuple[bool, str | None]:
    """
    Validate that a string option is one of the allowed values.

    Args:
        value: Option value
        choices: Allowed values
        name: Option name used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    allowed = list(choices)
    if value not in allowed:
        return False, f"{name} must be one of {', '.join(allowed)}; got {value!r}"
    return True, None


def validate_method_names(
    methods: Sequence[str], valid_methods: Sequence[str]
) -> tuple[bool, str | None]:
    """
    Validate a list of evaluation method names.

    Args:
        methods: Requested method names
        valid_methods: Known method names

    Returns:
        Tuple of (is_valid, error_message)

    Example:
        is_valid, error = validate_method_names(["dsf", "cvae"], METHODS)
    """
    if not methods:
        return False, "At least one method must be given"

    unknown = [m for m in methods if m not in valid_methods]
    if unknown:
        return (
            False,
            f"Unknown method(s): {', '.join(unknown)}. "
            f"Valid methods: {', '.join(valid_methods)}",
        )
    return True, None


def validate_input_file(path: Path, description: str) -> tuple[bool, str | None]:
    """
    Validate that a prerequisite input file exists.

    Args:
        path: File that a command depends on
        description: Human-readable description for the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not path.is_file():
        logger.debug("Missing prerequisite %s at %s", description, path)
        return False, f"Missing {description}: {path}"
    return True, None
