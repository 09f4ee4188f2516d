"""Exception hierarchy.

Every error raised by the library derives from :class:`LstLabError`. The
three families below map onto distinct CLI exit codes.
"""

from __future__ import annotations


class LstLabError(Exception):
    exit_code = 1


class ConfigError(LstLabError, ValueError):
    """Invalid configuration or input parameters."""

    exit_code = 3


class DataError(LstLabError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 4


class NumericalError(LstLabError, ArithmeticError):
    """A computation is undefined for the given inputs."""

    exit_code = 5


# chain / lsp state transitions
class ValidationError(ConfigError):
    pass


class CoverageError(ConfigError):
    pass


class InsufficientStakeError(ValidationError):
    pass


class UnstakingUnsupportedError(ValidationError):
    pass


class InsufficientSupplyError(ValidationError):
    pass


class RedemptionUnsupportedError(ValidationError):
    pass


class UndefinedFairValueError(NumericalError):
    pass


class PoolDrainError(ValidationError):
    pass


class AccountingError(NumericalError):
    """A conservation identity failed during simulation."""


# econometrics
class InsufficientObservationsError(NumericalError):
    pass


class SingularDesignError(NumericalError):
    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class InfiniteVifError(SingularDesignError):
    pass


class ExactLeverageError(NumericalError):
    pass
