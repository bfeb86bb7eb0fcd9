"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class MimilError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(MimilError, ValueError):
    """An argument is outside its valid domain."""


class ShapeError(ParameterError):
    """Operand shapes do not conform."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: shape mismatch {joined}")


class ConfigError(MimilError):
    """Malformed or inconsistent configuration."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message if key is None else f"{key}: {message}")


class DataError(MimilError):
    """Input data is missing, unreadable or inconsistent."""


class EmptyResultError(DataError):
    """An operation produced nothing (e.g. recording shorter than a window)."""


class FeatureError(DataError):
    """Low-level descriptor extraction failed.

    ``fallback`` names what the caller is expected to substitute.
    """

    def __init__(self, message, segment=None, fallback=None):
        self.segment = segment
        self.fallback = fallback
        if segment is not None:
            message = f"segment {segment}: {message}"
        super().__init__(message)


class NumericError(MimilError, ArithmeticError):
    """Non-finite values appeared during optimization or estimation."""
