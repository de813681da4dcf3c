"""Exceptions raised by the bnbcp package."""

from typing import Optional


class BNBCPError(Exception):
    """Base class for all bnbcp errors"""


class TensorFormatError(BNBCPError, ValueError):
    """Tensor file is structurally malformed (e.g. missing dims header)"""


class TensorParseError(TensorFormatError):
    """A data line could not be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class TensorValidationError(BNBCPError, ValueError):
    """Entries violate the tensor invariants"""


class DuplicateIndexError(TensorValidationError):
    """The same coordinate appears more than once"""


class NumericError(BNBCPError, ArithmeticError):
    """Non-finite or out-of-domain values reached a numeric kernel"""


class SizeLimitError(BNBCPError, ValueError):
    """Requested synthetic tensor exceeds the dense size cap"""


class LabelingError(BNBCPError, ValueError):
    """Vocabulary file does not cover the mode being labeled"""


class ModelFormatError(BNBCPError, ValueError):
    """Saved model directory is incomplete or inconsistent"""
