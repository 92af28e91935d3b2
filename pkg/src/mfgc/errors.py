"""Exception types raised by the solvers."""

from __future__ import annotations


class MFGCError(Exception):
    """Base class for all solver errors."""


class ShapeError(MFGCError, ValueError):
    """Array shape does not match the grid it is used with."""


class ParameterError(MFGCError, ValueError):
    """A model or solver parameter is outside its admissible range."""


class NumericFailure(MFGCError):
    """The inner convex minimization behind a Hamiltonian did not converge.

    ``best`` holds the last iterate and ``grad_norm`` its gradient norm.
    """

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class FixedPointFailure(MFGCError):
    """Damped Picard iteration on the control field did not converge."""

    def __init__(self, message, residuals=(), time_index=None, theta=None, outer_iteration=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.time_index = time_index
        self.theta = theta
        self.outer_iteration = outer_iteration

    def __str__(self):
        where = []
        if self.theta is not None:
            where.append(f"theta={self.theta}")
        if self.outer_iteration is not None:
            where.append(f"outer={self.outer_iteration}")
        if self.time_index is not None:
            where.append(f"n={self.time_index}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


class StepError(MFGCError):
    """A PDE time step produced non-finite values or an invalid density."""

    def __init__(self, message, time_index=None):
        super().__init__(message if time_index is None else f"{message} at time index {time_index}")
        self.time_index = time_index
