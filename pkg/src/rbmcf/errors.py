"""Exception hierarchy shared across the package.

Each family maps onto one CLI exit code (see ``exit_code_for``).
"""


class RbmcfError(Exception):
    """Base class for all package errors."""


class ShapeError(RbmcfError, ValueError):
    pass


class CapacityError(RbmcfError):
    """An exact-enumeration guard was exceeded."""


class NumericError(RbmcfError):
    pass


class NumericOverflowError(NumericError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(NumericError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DataError(RbmcfError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RatingRangeError(ParseError):
    pass


class EmptyDatasetError(DataError):
    pass


class CompatibilityError(DataError):
    pass


class ModelFileError(DataError):
    pass


class FormatError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class ConfigError(DataError):
    pass


class TransportError(RbmcfError):
    """Peer loss, timeout or broken collective."""


class ProtocolError(TransportError):
    """Desynchronised collective, bad framing or handshake mismatch."""


class ConsistencyError(TransportError):
    """Workers disagree on parameter state."""


def exit_code_for(exc):
    if isinstance(exc, TransportError):
        return 3
    if isinstance(exc, NumericError):
        return 4
    if isinstance(exc, (DataError, CapacityError, ShapeError)):
        return 2
    return 1
