"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class BrsdaError(Exception):
    exit_code = 1


class ConfigError(BrsdaError, ValueError):
    """Invalid configuration, parameter domain, or tensor contract (exit code 2)."""

    exit_code = 2


class ParameterError(ConfigError):
    """A scalar hyperparameter is outside its domain."""


class ShapeError(ConfigError):
    """Tensors that must agree in shape (or dimension) do not."""


class InvalidDistributionError(ConfigError):
    """Log-variance contains NaN or Inf."""


class DataError(BrsdaError, ValueError):
    """Dataset ingestion or split failure (exit code 3)."""

    exit_code = 3


class UndefinedMetricError(BrsdaError, ValueError):
    """The metric has no value on the given labels (e.g. a single class)."""

    exit_code = 3


class NumericalError(BrsdaError, ArithmeticError):
    """A training step produced a non-finite loss (exit code 4).

    The offending loss breakdown is attached as ``breakdown``.
    """

    exit_code = 4

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
