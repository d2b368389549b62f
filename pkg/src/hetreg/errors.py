"""Exception types raised across the package."""


class HetRegError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(HetRegError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(HetRegError, ValueError):
    """A Cholesky pivot was not strictly positive."""

    def __init__(self, message="matrix is not positive definite", pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NotSymmetric(HetRegError, ValueError):
    pass


class DegenerateCovariance(HetRegError, ValueError):
    """The reference distribution has a singular covariance (det <= 0)."""


class ConvergenceFailure(HetRegError, RuntimeError):
    pass


class KOutOfRange(HetRegError, ValueError):
    pass


class TooFewSamples(HetRegError, ValueError):
    pass


class TooFewColumns(HetRegError, ValueError):
    pass


class UnknownVariant(HetRegError, ValueError):
    pass


class MissingGroundTruth(HetRegError, ValueError):
    pass


class CycleDetected(HetRegError, RuntimeError):
    pass


class NonFinite(HetRegError, FloatingPointError):
    """A loss evaluated to inf or nan. ``log`` holds the partial metrics log."""

    def __init__(self, message, log=None, epoch=None):
        super().__init__(message)
        self.log = log
        self.epoch = epoch


class ParseError(HetRegError, ValueError):
    """Malformed CSV cell; ``row`` and ``col`` are 1-based file positions."""

    def __init__(self, message, row, col):
        super().__init__(f"{message} (row {row}, column {col})")
        self.row = row
        self.col = col


class ConfigError(HetRegError, ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
