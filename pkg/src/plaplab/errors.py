"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """An argument is outside the accepted domain of an operation."""


class PreconditionViolation(ValueError):
    """Input data breaks an invariant the operation relies on."""

    def __init__(self, message: str, cell: int | None = None):
        super().__init__(message)
        self.cell = cell


class ConvergenceFailure(RuntimeError):
    """The nonlinear solver stopped before reaching its tolerance.

    The best iterate seen so far and its residual norm are kept so callers
    can record the failure and continue.
    """

    def __init__(self, message: str, best_iterate=None, residual_norm: float = float("nan")):
        super().__init__(message)
        self.best_iterate = best_iterate
        self.residual_norm = residual_norm
