"""Exception hierarchy shared by every scaf module."""


class ScafError(Exception):
    """Base class for all errors raised by scaf."""


class DimensionError(ScafError, ValueError):
    """Array shapes or trace lengths do not match."""


class EmptyInputError(ScafError, ValueError):
    """An operation received an empty trace set or trace."""


class RangeError(ScafError, ValueError):
    """A numeric argument lies outside its permitted range."""


class InsufficientDataError(ScafError, ValueError):
    """Too few traces (overall or for one class) for the requested statistic."""


class InsufficientClassesError(ScafError, ValueError):
    """The trace set does not contain enough distinct key classes."""


class ConfigurationError(ScafError, ValueError):
    """A synthesis or pipeline configuration is internally inconsistent."""


class TraceFormatError(ScafError, ValueError):
    """A binary container has a bad magic, version or size."""


class TrainingDivergedError(ScafError, RuntimeError):
    """Training produced a non-finite loss."""


class NumericalError(ScafError, ArithmeticError):
    """A numerical kernel failed (e.g. a singular covariance)."""
