"""Differentially private speaker anonymization on pitch and bottleneck features."""

from .errors import (CalibrationError, ConvergenceError, DataError, DegenerateInputError, DpanonError,
                     FormatError)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConvergenceError",
    "DataError",
    "DegenerateInputError",
    "DpanonError",
    "FormatError",
    "__version__",
]
