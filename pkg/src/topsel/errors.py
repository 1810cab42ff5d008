"""Exception types raised across the package.

Everything derives from TopselError so callers can catch library failures
with a single except clause. ParameterError doubles as ValueError because
bad arguments to constructors are plain value errors to most callers.
"""


class TopselError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TopselError, ValueError):
    """An argument or configuration value violates a documented precondition."""


class FitError(TopselError):
    """Model fitting failed (degenerate data, empty bin, non-physical slope)."""


class NumericalError(TopselError):
    """A numerical routine could not reach its accuracy target."""


class CapacityError(TopselError):
    """A requested computation exceeds a hard size limit."""


class InferenceError(TopselError):
    """Posterior or list construction failed on otherwise valid inputs."""


class AlignmentError(TopselError):
    """Measurement and ground-truth logs cannot be aligned on a common clock."""


class ParseError(TopselError):
    """A trace line could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
