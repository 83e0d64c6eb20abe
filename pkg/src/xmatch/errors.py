"""Exception hierarchy shared by every xmatch module."""


class XMatchError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class UsageError(XMatchError):
    exit_code = 1


class ConfigError(UsageError):
    """Invalid configuration or argument combination."""


class RangeError(UsageError, ValueError):
    """A numeric argument lies outside its admissible range."""


class DataError(XMatchError):
    exit_code = 2


class NormalizationError(DataError, ValueError):
    """Vector cannot be length-normalized (zero norm or non-finite)."""


class DimensionError(DataError, ValueError):
    """Operands have incompatible shapes."""


class EmptyInputError(DataError, ValueError):
    pass


class InsufficientDataError(DataError):
    pass


class ParseError(DataError):
    """Malformed input file. ``row`` is the 1-based line number when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
