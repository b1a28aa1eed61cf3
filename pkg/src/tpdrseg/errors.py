"""Exception types shared across the package."""


class TPSegError(Exception):
    """Base class for all package errors."""


class DimensionError(TPSegError, ValueError):
    pass


class NumericError(TPSegError, ArithmeticError):
    pass


class ValidationError(TPSegError, ValueError):
    pass


class ConfigError(ValidationError):
    pass


class FormatError(TPSegError, ValueError):
    """Malformed file contents; carries the byte offset or record name when known."""

    def __init__(self, message, offset=None, record=None):
        detail = message
        if offset is not None:
            detail += f" (at byte offset {offset})"
        if record is not None:
            detail += f" (record {record!r})"
        super().__init__(detail)
        self.offset = offset
        self.record = record


class GenerationError(TPSegError, RuntimeError):
    pass


class UndefinedMetricError(TPSegError, ValueError):
    pass
