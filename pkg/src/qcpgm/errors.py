"""Exception types shared across the package."""


class QcpgmError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(QcpgmError, ValueError):
    """A physical or configuration parameter violates its constraints."""


class EmptyDistributionError(QcpgmError):
    """A conditional far-field distribution carries no probability mass."""


class UnsortedStreamError(QcpgmError, ValueError):
    """An event stream that must be time-sorted is not."""


class GridMismatchError(QcpgmError, ValueError):
    """Two grids that must share a shape do not."""


class NumericalError(QcpgmError, ArithmeticError):
    """A computation produced a degenerate or non-finite result."""


class FileFormatError(QcpgmError, OSError):
    """A data file is malformed or has an unexpected layout."""


class ConfigError(QcpgmError, ValueError):
    """A configuration document is malformed or fails validation."""
