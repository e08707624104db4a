"""Exception hierarchy shared by the estimation modules."""

from __future__ import annotations


class GMRFError(Exception):
    """Base class for all errors raised by gmrfsel."""


class ConfigurationError(GMRFError, ValueError):
    """Invalid parameters or inconsistent inputs."""


class InfeasibleError(GMRFError, ValueError):
    """A coefficient field does not define a valid (positive definite) field."""


class AssumptionError(GMRFError, ValueError):
    """A structural assumption (e.g. diagonal dominance) required by a formula fails."""


class NumericalError(GMRFError, ArithmeticError):
    """Singular or ill-conditioned linear algebra."""


class SingularDesignError(NumericalError):
    """The normal equations of a least squares fit are singular."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    The best iterate and the remaining optimality gap are attached so callers
    can decide whether to use it anyway.
    """

    def __init__(self, message, best=None, gap=float("nan"), iterations=0):
        super().__init__(message)
        self.best = best
        self.gap = gap
        self.iterations = iterations


class CalibrationError(GMRFError, ValueError):
    """Data-driven penalty calibration failed."""
