"""Exception hierarchy shared across the package."""


class DpanonError(Exception):
    """Base class for errors raised by dpanon."""


class CalibrationError(DpanonError, ValueError):
    """Invalid privacy parameters (non-positive epsilon, scale or sensitivity)."""


class DataError(DpanonError, ValueError):
    """Input data violates an operation's preconditions."""


class DegenerateInputError(DataError):
    """Input is constant, all-zero or otherwise carries nothing to transform."""


class FormatError(DataError):
    """A file does not conform to its on-disk format."""


class ConvergenceError(DpanonError, RuntimeError):
    """An iterative procedure stopped without converging."""
