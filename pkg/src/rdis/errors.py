"""Exception types raised across the package."""


class RdisError(Exception):
    """Base class for all package errors."""


class DimensionError(RdisError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(RdisError, ValueError):
    """A documented precondition of an operation was violated."""


class DegenerateInputError(RdisError, ValueError):
    """Input is well-formed but has nothing to work on (e.g. no observed cells)."""


class TrainingError(RdisError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class IngestionError(RdisError, ValueError):
    """A data file could not be read or does not match the expected schema."""


class ConfigError(RdisError, ValueError):
    """An experiment configuration field is missing or out of range."""


class ReportError(RdisError, ValueError):
    """A result file could not be aggregated."""
