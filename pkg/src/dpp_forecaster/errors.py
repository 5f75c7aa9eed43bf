"""
Exception hierarchy for dpp-forecaster.

All library errors derive from ForecasterError so callers (the CLI in
particular) can map them to exit codes in one place.
"""


class ForecasterError(Exception):
    """Base class for all dpp-forecaster errors."""


class ConfigurationError(ForecasterError, ValueError):
    """Raised for invalid configuration, shape mismatches and missing inputs."""


class DomainError(ForecasterError, ValueError):
    """Raised when a quantity is mathematically undefined for the given input."""


class EvaluationError(ForecasterError, ValueError):
    """Raised when a metric is asked to score an empty sample set."""


class NumericalError(ForecasterError, ArithmeticError):
    """Raised when a closed-form quantity comes out non-finite."""


class OptimizationError(ForecasterError):
    """
    Raised when training diverges.

    Attributes:
        layer_name: Parameter entry with the offending gradient (if known)
        epoch: 1-indexed epoch in which the failure occurred (if known)
    """

    def __init__(
        self,
        message: str,
        layer_name: str | None = None,
        epoch: int | None = None,
    ):
        super().__init__(message)
        self.layer_name = layer_name
        self.epoch = epoch
