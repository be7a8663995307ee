"""Exception types raised by the library."""

from __future__ import annotations


class KscritError(Exception):
    """Base class for all library errors."""


class InvalidInputError(KscritError, ValueError):
    """Arguments violate a documented precondition."""


class DomainError(KscritError, ValueError):
    """A function was evaluated outside its domain."""

    def __init__(self, message: str, bound: float | None = None):
        super().__init__(message)
        self.bound = bound


class NoConvergenceError(KscritError, RuntimeError):
    """An iteration failed to contract or converge."""


class NumericalFailureError(KscritError, RuntimeError):
    """An integrator or time stepper collapsed."""

    def __init__(self, message: str, last_x: float | None = None):
        super().__init__(message)
        self.last_x = last_x


class InconsistencyError(KscritError, RuntimeError):
    """Two independent computations disagree beyond tolerance."""


class ConstraintViolationError(KscritError, RuntimeError):
    """A state left its admissible set during time stepping."""


class FitRejectedError(KscritError, ValueError):
    """A regression could not be performed on the supplied data."""
