"""Exception hierarchy shared by every ADK module."""

from __future__ import annotations


class ADKError(Exception):
    """Base class for all library errors."""


class DimensionError(ADKError, ValueError):
    """Feature vectors of incompatible dimension were combined."""


class DegenerateVectorError(ADKError, ValueError):
    """A vector with (near-)zero norm was used where a direction is needed."""


class EmptyInputError(ADKError, ValueError):
    pass


class SchemaError(ADKError, ValueError):
    """Inputs are individually valid but structurally inconsistent."""


class DomainError(ADKError, ValueError):
    pass


class MissingClassError(ADKError, ValueError):
    pass


class DataError(ADKError, ValueError):
    """Payload values are not usable (NaN, infinity)."""


class FormatError(ADKError, ValueError):
    """A binary file could not be decoded.

    Attributes:
        offset: byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class InvariantViolation(ADKError, AssertionError):
    """An internal post-condition did not hold."""


class LossClampWarning(UserWarning):
    """A head probability underflowed to zero and was clamped before the log."""
