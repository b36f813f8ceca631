"""Exception types raised by the library."""
from __future__ import annotations


class PairpoisError(Exception):
    """Base class for all library-specific errors."""


class NumericalFailure(PairpoisError):
    """A numerical evaluation produced a non-finite result.

    Carries the 1-based time index ``time_index`` (None when the failure
    is not tied to a series position) and the pair lag ``lag``.
    """

    def __init__(self, message: str, time_index: int | None = None, lag: int | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.lag = lag


class SingularMatrixError(PairpoisError):
    """A matrix required to be invertible is numerically singular.

    ``cond`` holds the estimated condition number.
    """

    def __init__(self, message: str, cond: float | None = None):
        super().__init__(message)
        self.cond = cond


class NotConvergedError(PairpoisError):
    """An operation required a converged fit but got a non-converged one."""


class DataFormatError(PairpoisError):
    """An input data file violates the expected format."""
