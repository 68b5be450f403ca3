"""Exception types shared across the package."""


class GraphAugError(Exception):
    """Base class for all package errors."""


class ValidationError(GraphAugError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Matrix shapes are incompatible for the requested operation."""


class FormatError(GraphAugError, ValueError):
    """A file could not be parsed under its declared format."""


class DegenerateRowError(ValidationError):
    """A softmax row has no unmasked entries."""


class ConfigError(GraphAugError, ValueError):
    """Bad experiment configuration; ``key`` holds the dotted key path."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class IoError(GraphAugError, OSError):
    """Reading or writing a file failed."""


class TapeError(GraphAugError, RuntimeError):
    """Misuse of a differentiation tape (e.g. a second backward pass)."""
