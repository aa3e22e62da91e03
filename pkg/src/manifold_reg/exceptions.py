"""Exception hierarchy shared by every module."""


class ManifoldRegError(Exception):
    """Base class for all package errors."""


class DimensionError(ManifoldRegError, ValueError):
    """Shapes of operands are incompatible."""


class NumericError(ManifoldRegError, ArithmeticError):
    """A NaN or infinity reached an operation boundary."""


class ContractError(ManifoldRegError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ManifoldRegError, ValueError):
    """Invalid configuration value or key."""


class FormatError(ManifoldRegError, ValueError):
    """A data file does not follow the expected binary layout."""


class AccountingError(ManifoldRegError, RuntimeError):
    """The memory ledger went negative or was freed twice."""


class NumericAbort(ManifoldRegError, RuntimeError):
    """Training produced a non-finite loss.

    ``snapshot`` carries the epoch, batch index and the loss parts that were
    available when the failure was detected.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = dict(snapshot or {})
