"""Per-time fixed point ``mu = (Id, -H_p(t, ., p(.), mu)) # m`` on graph measures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FixedPointFailure, ParameterError
from .grid import TorusGrid
from .laws import ControlLaw, lambda_moment


@dataclass(frozen=True)
class FixedPointOptions:
    damping: float = 0.5
    tol: float = 1e-11
    max_iter: int = 500
    max_halvings: int = 30

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ParameterError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ParameterError("fixed-point tolerance must be positive")


@dataclass
class FixedPointResult:
    law: ControlLaw
    iterations: int
    residuals: list = field(default_factory=list)


def _sup_on(mask, v):
    r = np.sqrt(np.sum(v**2, axis=-1))
    return float(r[mask].max()) if mask.any() else 0.0


def solve_mu(grid: TorusGrid, t, p_field, m, evaluator, opts=FixedPointOptions(), warm=None,
             full=False):
    """Damped Picard iteration on the control field.

    ``alpha_{k+1} = (1 - w) alpha_k + w (-H_p(t, x, p, summary(alpha_k)))``
    from ``alpha_0 = warm`` (zero by default); the damping ``w`` halves when
    the residual grows or the defect ``target - alpha`` overshoots (flips sign
    against the previous one with ratio below -1/2), at most
    ``opts.max_halvings`` times. The residual is
    the sup over the numerical support of ``|alpha_k + H_p(..., summary(alpha_k))|``.
    Returns the :class:`ControlLaw`, or a :class:`FixedPointResult` with
    ``full=True``.
    """
    p_field = grid.check_vector(p_field, "p")
    m = grid.check_scalar(m, "density")
    x = grid.coords
    supp = grid.support(m)
    if evaluator.mu_independent:
        s0 = evaluator.summarize(grid, m, np.zeros_like(p_field))
        alpha = -evaluator.grad_p(t, x, p_field, s0)
        law = ControlLaw(grid, m, alpha, evaluator.summarize(grid, m, alpha))
        return FixedPointResult(law, 1, [0.0]) if full else law

    alpha = np.zeros_like(p_field) if warm is None else np.array(warm, dtype=float)
    omega = opts.damping
    halvings = 0
    history = []
    prev = None
    for k in range(opts.max_iter):
        s = evaluator.summarize(grid, m, alpha)
        target = -evaluator.grad_p(t, x, p_field, s, warm=alpha)
        res = _sup_on(supp, alpha - target)
        history.append(res)
        if res <= opts.tol:
            law = ControlLaw(grid, m, alpha, s)
            return FixedPointResult(law, k, history) if full else law
        if not np.isfinite(res):
            break
        step = (target - alpha)[supp]
        growing = k > 0 and res > history[-2]
        # overshoot: the defect flips against the previous one without shrinking much
        flipping = prev is not None and np.sum(step * prev) < -0.5 * np.sum(prev * prev)
        if (growing or flipping) and halvings < opts.max_halvings:
            omega *= 0.5
            halvings += 1
        prev = step
        alpha = (1 - omega) * alpha + omega * target
    raise FixedPointFailure(
        f"control fixed point did not converge in {opts.max_iter} iterations "
        f"(last residual {history[-1]:.3e})", residuals=history,
    )


def fixed_point_residual(grid, t, p_field, law: ControlLaw, evaluator) -> float:
    target = -evaluator.grad_p(t, grid.coords, p_field, law.summary)
    return _sup_on(grid.support(law.density), law.control - target)


def apriori_check(law: ControlLaw, p_field, c0, q, q_prime) -> dict:
    """Margins of the two a priori bounds on a solution of the fixed point.

    ``Lambda_q'^q' <= 4 C0^2 + (q'^(q-1) (2 C0)^q / q) ||p||_{L^q(m)}^q`` and
    ``Lambda_inf <= C0 (1 + ||p||_inf + Lambda_q')``. A negative margin points
    at an inconsistent model constant, not at the solver.
    """
    grid = law.grid
    pn = np.sqrt(np.sum(np.asarray(p_field) ** 2, axis=-1))
    p_lq = grid.integrate(pn**q, law.density)
    lam_qp = law.moment(q_prime)
    lam_inf = law.moment(np.inf)
    bound_qp = 4 * c0**2 + q_prime ** (q - 1) * (2 * c0) ** q / q * p_lq
    bound_inf = c0 * (1 + float(pn.max()) + lam_qp)
    return {
        "lambda_qp_pow": lam_qp**q_prime,
        "bound_qp": bound_qp,
        "margin_qp": bound_qp - lam_qp**q_prime,
        "lambda_inf": lam_inf,
        "bound_inf": bound_inf,
        "margin_inf": bound_inf - lam_inf,
        "ok": bool(bound_qp >= lam_qp**q_prime and bound_inf >= lam_inf),
    }


# -- closed-form summary solves used as oracles ------------------------------


def exhaustible_mean_control(G, epsilon):
    """Mean control of the linear exhaustible model given ``G = int p dm``.

    Solves ``abar = -(G + eps/(1+eps) abar - 1/(1+eps)) / 2``.
    """
    return (1.0 - (1.0 + epsilon) * G) / (2.0 + 3.0 * epsilon)


def crowd_weighted_mean(grid: TorusGrid, m, p_field, model):
    """``V`` of the quadratic crowd model: ``V = -int p k dm / (Z + theta lam int k dm)``."""
    prm = model.params
    if prm.a_prime != 2 and prm.theta_mix != 1:
        raise ParameterError("closed form requires a' = 2 or theta = 1")
    k = model.kernel(grid.coords)
    z = model.summarize(grid, m, np.zeros(grid.shape + (grid.dim,))).normalizer
    if z == 0:
        return np.zeros(grid.dim)
    pk = grid.integrate(p_field * k[..., None], m)
    kk = grid.integrate(k, m)
    return -pk / (z + prm.theta_mix * prm.lam * kk)


__all__ = [
    "FixedPointOptions", "FixedPointResult", "solve_mu", "fixed_point_residual",
    "apriori_check", "exhaustible_mean_control", "crowd_weighted_mean", "lambda_moment",
]
