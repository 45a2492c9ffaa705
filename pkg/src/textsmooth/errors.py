"""Exception hierarchy shared by every module in the package."""


class TextSmoothError(Exception):
    """Base class for all package errors."""


class ShapeError(TextSmoothError, ValueError):
    """Operand shapes do not agree."""


class NumericError(TextSmoothError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(TextSmoothError, ValueError):
    """A documented precondition was violated."""


class IngestionError(TextSmoothError, ValueError):
    """Corpus or dataset file could not be read."""


class LabelError(TextSmoothError, KeyError):
    """A label name is not part of the declared label set."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(TextSmoothError, ValueError):
    """Model or experiment configuration is invalid."""


class FormatError(TextSmoothError, ValueError):
    """A checkpoint or cache file is malformed or incompatible."""


class SmoothingError(TextSmoothError, ValueError):
    """Teacher inputs or smoothing arguments are invalid."""
