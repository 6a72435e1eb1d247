"""Exception types shared across the package.

The CLI maps these onto its exit-code contract, so every raise site picks the
class by *what went wrong*, not by where it happened.
"""


class PowerBenchError(Exception):
    """Base class for all package errors."""


class InputDomainError(PowerBenchError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvariantViolation(PowerBenchError):
    """A model or framework invariant does not hold."""


class ConfigurationError(PowerBenchError, ValueError):
    """Deployment or scenario configuration is inconsistent."""


class CalibrationError(PowerBenchError):
    """Calibration targets cannot be met.

    ``violations`` lists the names of the target bands that failed.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class BaselineRejected(PowerBenchError):
    """Baseline samples are too noisy to be used as a reference."""


class DataQualityError(PowerBenchError):
    """Cleaning would discard too much of a series."""


class EmptyInputError(PowerBenchError, ValueError):
    """An aggregation received no samples."""


class NotFound(PowerBenchError, LookupError):
    """A socket, core or container does not exist (or is not placed)."""
