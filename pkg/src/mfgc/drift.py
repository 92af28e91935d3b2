"""Controlled drifts ``b(alpha)`` other than the identity.

A problem with dynamics ``dX = b(alpha) dt + sqrt(2 nu) dW`` is solved in
drift variables ``b~ = b(alpha)``: the running cost becomes
``L^b(b~) = L(alpha*(b~))`` with ``alpha*`` the inverse of ``b``, and its
conjugate ``H^b(p) = sup_a -p.b(a) - L(a)`` drives the usual machinery.
Laws produced by the solver then carry drift fields; their summaries are the
statistics of the pushed-back control law, which is what ``L`` reads.

Shipped drifts do not depend on ``(t, x)`` or on the law. The ``t, x``
arguments are kept so user drifts can follow the same signatures.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .laws import ControlLaw
from .legendre import HamiltonianEvaluator
from .models import LagrangianModel, _dot, _norm


class DriftModel:
    """Invertible drift map with its inverse and first derivatives.

    ``q0`` and ``c0`` are the declared growth exponent and constant of
    ``|b(a)| <= c0 (1 + |a|^q0)`` and ``|alpha*(b~)|^q0 <= c0 (1 + |b~|)``.
    """

    kind = "abstract"
    q0 = 1.0
    c0 = 1.0
    dim = 1

    def apply(self, t, x, alpha, s=None):
        raise NotImplementedError

    def inverse(self, t, x, btilde, s=None):
        raise NotImplementedError

    def jacobian(self, t, x, alpha, s=None):
        """``Db(alpha)``, shape ``alpha.shape + (d,)`` with ``[..., k, j] = d b_k / d a_j``."""
        raise NotImplementedError

    def in_range(self, btilde):
        return np.ones(np.shape(btilde)[:-1], dtype=bool)

    def describe(self) -> dict:
        return {"drift": self.kind, "q0": self.q0, "c0": self.c0}


class IdentityDrift(DriftModel):
    kind = "identity"

    def __init__(self, dim=1):
        self.dim = dim

    def apply(self, t, x, alpha, s=None):
        return np.asarray(alpha, dtype=float)

    def inverse(self, t, x, btilde, s=None):
        return np.asarray(btilde, dtype=float)

    def jacobian(self, t, x, alpha, s=None):
        alpha = np.asarray(alpha, dtype=float)
        return np.broadcast_to(np.eye(alpha.shape[-1]), alpha.shape + (alpha.shape[-1],)).copy()


class LinearDrift(DriftModel):
    """Componentwise ``b_i = c_i alpha_i`` with constant nonzero ``c_i``."""

    kind = "linear"

    def __init__(self, coeffs, dim=None):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if dim is not None and c.size == 1:
            c = np.full(dim, c[0])
        if not np.all(np.isfinite(c)) or np.any(np.abs(c) < 1e-8):
            raise ParameterError("linear drift coefficients must be finite and nonzero")
        self.coeffs = c
        self.dim = c.size
        self.q0 = 1.0
        self.c0 = float(max(np.abs(c).max(), 1.0 / np.abs(c).min()))

    def apply(self, t, x, alpha, s=None):
        return self.coeffs * np.asarray(alpha, dtype=float)

    def inverse(self, t, x, btilde, s=None):
        return np.asarray(btilde, dtype=float) / self.coeffs

    def jacobian(self, t, x, alpha, s=None):
        alpha = np.asarray(alpha, dtype=float)
        return np.broadcast_to(np.diag(self.coeffs), alpha.shape + (self.dim,)).copy()

    def describe(self):
        return {**super().describe(), "coeffs": self.coeffs.tolist()}


class SaturatingDrift(DriftModel):
    """``b = alpha / (1 + |alpha|^2)^(s/2)`` for ``s`` in ``[0, 1]``.

    The radial profile ``r -> r (1 + r^2)^(-s/2)`` is strictly increasing;
    its inverse is found by Newton's method on the radial profile. With
    ``s = 1`` the range is the open unit ball.
    """

    kind = "saturating"

    def __init__(self, exponent=0.5, dim=1):
        if not 0 <= exponent <= 1:
            raise ParameterError("saturating drift exponent must lie in [0, 1]")
        self.s = float(exponent)
        self.dim = dim
        self.q0 = 1.0 - self.s
        self.c0 = 2.0 ** (self.s / 2) + 1.0

    def _profile(self, r):
        return r * (1.0 + r * r) ** (-0.5 * self.s)

    def _profile_slope(self, r):
        return (1.0 + r * r) ** (-0.5 * self.s - 1.0) * (1.0 + (1.0 - self.s) * r * r)

    def apply(self, t, x, alpha, s=None):
        alpha = np.asarray(alpha, dtype=float)
        w = (1.0 + _dot(alpha, alpha)) ** (-0.5 * self.s)
        return alpha * w[..., None]

    def in_range(self, btilde):
        if self.s < 1:
            return np.ones(np.shape(btilde)[:-1], dtype=bool)
        return _norm(btilde) < 1.0

    def radial_inverse(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.s == 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(rho < 1, rho / np.sqrt(np.maximum(1 - rho * rho, 0.0)), np.inf)
        if self.s == 0:
            return rho.copy()
        # the profile is concave on r >= 0, so Newton from r = rho (left of the
        # root) increases monotonically to it
        r = rho.copy()
        for _ in range(100):
            step = (self._profile(r) - rho) / self._profile_slope(r)
            r = r - step
            if np.all(np.abs(step) <= 1e-14 * (1.0 + r)):
                break
        return r

    def inverse(self, t, x, btilde, s=None):
        btilde = np.asarray(btilde, dtype=float)
        rho = _norm(btilde)
        r = self.radial_inverse(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(rho > 0, r / np.where(rho > 0, rho, 1.0), 1.0)
        return btilde * scale[..., None]

    def jacobian(self, t, x, alpha, s=None):
        alpha = np.asarray(alpha, dtype=float)
        r2 = _dot(alpha, alpha)
        v = (1.0 + r2) ** (-0.5 * self.s)
        dv = -0.5 * self.s * (1.0 + r2) ** (-0.5 * self.s - 1.0)
        d = alpha.shape[-1]
        eye = np.eye(d)
        return v[..., None, None] * eye + 2.0 * dv[..., None, None] * alpha[..., :, None] * alpha[..., None, :]

    def describe(self):
        return {**super().describe(), "exponent": self.s}


def make_drift(kind="identity", dim=1, coeffs=None, exponent=0.5) -> DriftModel:
    """Construct a shipped drift by name.

    ``"cubic"`` (``b = |alpha|^2 alpha``) is refused: its inverse
    ``b~ |b~|^(-2/3)`` is not differentiable at the origin and the
    transformed cost ``|b~|^(2/3) / 2`` is neither convex nor coercive, so the
    problem is ill-posed.
    """
    if kind == "identity":
        return IdentityDrift(dim)
    if kind == "linear":
        return LinearDrift(1.0 if coeffs is None else coeffs, dim=dim)
    if kind == "saturating":
        return SaturatingDrift(exponent, dim)
    if kind == "cubic":
        raise ParameterError(
            "drift 'cubic' (b = |alpha|^2 alpha) is not supported: its inverse is not "
            "differentiable at 0 and the transformed cost is not convex"
        )
    raise ParameterError(f"unknown drift {kind!r}")


class TransformedLagrangian(LagrangianModel):
    """``L^b(t, x, b~, mu) = L(t, x, alpha*(b~), mu)`` in drift variables.

    ``summarize`` maps the drift field back to controls before reducing, so
    the summary it returns is the one ``L`` itself reads.
    """

    def __init__(self, base: LagrangianModel, drift: DriftModel, fd_step=1e-6):
        if drift.dim != base.dim:
            raise ParameterError(f"drift dimension {drift.dim} does not match model dimension {base.dim}")
        self.base = base
        self.drift = drift
        self.dim = base.dim
        self.q_prime = base.q_prime
        self.c0 = base.c0 * drift.c0 ** base.q_prime
        self.summary_kind = base.summary_kind
        self.mu_independent = base.mu_independent
        self.fd_step = fd_step

    def summarize(self, grid, m, btilde):
        return self.base.summarize(grid, m, self.drift.inverse(0.0, grid.coords, btilde))

    def lagrangian(self, t, x, b, s):
        b = np.asarray(b, dtype=float)
        ok = self.drift.in_range(b)
        a = self.drift.inverse(t, x, np.where(ok[..., None], b, 0.0), s)
        return np.where(ok, self.base.lagrangian(t, x, a, s), np.inf)

    def grad_alpha(self, t, x, b, s):
        b = np.asarray(b, dtype=float)
        ok = self.drift.in_range(b)
        a = self.drift.inverse(t, x, np.where(ok[..., None], b, 0.0), s)
        jac = self.drift.jacobian(t, x, a, s)
        g = self.base.grad_alpha(t, x, a, s)
        # D alpha* = (Db)^-1, so grad L^b = (Db)^-T grad L
        out = np.linalg.solve(np.swapaxes(jac, -1, -2), g[..., None])[..., 0]
        return np.where(ok[..., None], out, np.nan)

    def hess_alpha(self, t, x, b, s):
        if isinstance(self.drift, (IdentityDrift, LinearDrift)):
            c = 1.0 / (self.drift.coeffs if isinstance(self.drift, LinearDrift) else np.ones(self.dim))
            a = self.drift.inverse(t, x, b, s)
            return self.base.hess_alpha(t, x, a, s) * c[:, None] * c[None, :]
        b = np.asarray(b, dtype=float)
        d = b.shape[-1]
        h = self.fd_step * (1.0 + _norm(b))
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            step = h[..., None] * e
            cols.append((self.grad_alpha(t, x, b + step, s) - self.grad_alpha(t, x, b - step, s))
                        / (2 * h[..., None]))
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))

    def grad_x(self, t, x, b, s):
        return self.base.grad_x(t, x, self.drift.inverse(t, x, b, s), s)

    @property
    def has_closed_form(self):
        return self.base.has_closed_form and isinstance(self.drift, (IdentityDrift, LinearDrift))

    def closed_form(self, t, x, p, s):
        c = self.drift.coeffs if isinstance(self.drift, LinearDrift) else np.ones(self.dim)
        h, a = self.base.closed_form(t, x, c * np.asarray(p, dtype=float), s)
        return h, c * a

    def describe(self):
        return {"model": "TransformedLagrangian", "base": self.base.describe(),
                "drift": self.drift.describe()}


class DriftTransformedEvaluator(HamiltonianEvaluator):
    """Evaluator of ``H^b`` with the same protocol as :class:`HamiltonianEvaluator`.

    The identity drift forwards every call to the base evaluator unchanged.
    Linear drifts on closed-form models use ``H^b(p) = H(c p)``; everything
    else goes through the numeric Legendre transform of ``L^b``.
    """

    def __init__(self, base_evaluator: HamiltonianEvaluator, drift: DriftModel):
        self.base_evaluator = base_evaluator
        self.drift = drift
        self.identity = isinstance(drift, IdentityDrift)
        mode = base_evaluator.mode if base_evaluator.mode == "numeric" else "auto"
        super().__init__(TransformedLagrangian(base_evaluator.model, drift), mode,
                         tol=base_evaluator.tol, max_iter=base_evaluator.max_iter)

    def summarize(self, grid, m, btilde):
        if self.identity:
            return self.base_evaluator.summarize(grid, m, btilde)
        return super().summarize(grid, m, btilde)

    def lagrangian(self, t, x, btilde, s):
        if self.identity:
            return self.base_evaluator.lagrangian(t, x, btilde, s)
        return super().lagrangian(t, x, btilde, s)

    def grad_alpha(self, t, x, btilde, s):
        if self.identity:
            return self.base_evaluator.grad_alpha(t, x, btilde, s)
        return super().grad_alpha(t, x, btilde, s)

    def hamiltonian(self, t, x, p, s, warm=None):
        if self.identity:
            return self.base_evaluator.hamiltonian(t, x, p, s, warm)
        return super().hamiltonian(t, x, p, s, warm)

    def grad_x(self, t, x, p, s):
        if self.identity:
            return self.base_evaluator.grad_x(t, x, p, s)
        return super().grad_x(t, x, p, s)


def transformed_hamiltonian(base_evaluator, drift: DriftModel, t, x, p, s, warm=None):
    """``(H^b, b~*)`` at momenta ``p``; the optimal drift is ``b~* = -H^b_p``."""
    return DriftTransformedEvaluator(base_evaluator, drift).hamiltonian(t, x, p, s, warm)


def push_control_law(law: ControlLaw, drift: DriftModel, t=0.0) -> ControlLaw:
    """Control law to drift variables; the summary (read by ``L``) is kept."""
    x = law.grid.coords
    return ControlLaw(law.grid, law.density, drift.apply(t, x, law.control, law.summary), law.summary)


def recover_control_law(law_b: ControlLaw, drift: DriftModel, t=0.0) -> ControlLaw:
    """Drift law back to control variables, nodewise ``alpha = alpha*(b~)``."""
    x = law_b.grid.coords
    return ControlLaw(law_b.grid, law_b.density, drift.inverse(t, x, law_b.control, law_b.summary),
                      law_b.summary)


def round_trip_errors(drift: DriftModel, samples, t=0.0, x=None):
    """Sup errors of ``b(alpha*(b~)) - b~`` and ``alpha*(b(a)) - a`` on ``samples``.

    Samples outside the drift's range are skipped on the first check.
    """
    samples = np.asarray(samples, dtype=float)
    x = np.zeros_like(samples) if x is None else x
    ok = drift.in_range(samples)
    fwd = drift.apply(t, x, drift.inverse(t, x, np.where(ok[..., None], samples, 0.0))) - samples
    back = drift.inverse(t, x, drift.apply(t, x, samples)) - samples
    return float(_norm(fwd)[ok].max(initial=0.0)), float(_norm(back).max())


def drift_audit(drift: DriftModel, radii=(0.0, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0)) -> dict:
    """Round trips and the two growth bounds on a radial sample lattice."""
    from .models import _radial_samples

    a = _radial_samples(drift.dim, radii)
    fwd, back = round_trip_errors(drift, a)
    b_vals = drift.apply(0.0, np.zeros_like(a), a)
    b_margin = drift.c0 * (1 + _norm(a) ** drift.q0) - _norm(b_vals)
    bt = b_vals  # every point in the range
    inv = _norm(drift.inverse(0.0, np.zeros_like(bt), bt)) ** drift.q0
    inv_margin = drift.c0 * (1 + _norm(bt)) - inv
    margins = {"round_trip": 1e-8 - max(fwd, back), "B2_drift": float(b_margin.min()),
               "B2_inverse": float(inv_margin.min())}
    return {"drift": drift.describe(), "round_trip_forward": fwd, "round_trip_backward": back,
            "margins": margins, "passed": all(v >= -1e-9 for v in margins.values())}


def equivalence_check(problem, report, tol=1e-7, hjb_opts=None) -> dict:
    """Residuals of the control-variable system rebuilt from a drift-variable solve.

    From the drift laws ``b~_n`` it reconstructs ``alpha_n = alpha*(b~_n)`` and
    checks, with quantities recomputed in control variables:

    * ``mu_alpha_res``: summary of ``(m_n, alpha_n)`` against the stored one
    * ``mu_b_res``: first-order condition ``L_a(alpha_n) + Db(alpha_n)^T p_n``
      of ``sup_a -p.b(a) - L(a)`` at ``p_n = grad_h u_n`` on the support
    * ``hjb_res``: HJB step defect with ``H`` evaluated as ``-p.b(a) - L(a)``
    * ``fpk_res``: FPK step defect with velocity ``b(alpha_n)``
    """
    from .coupler import theta_evaluator
    from .pde import HjbOptions, fpk_matrix, hjb_gradient, laplacian_matrix

    grid, tg = problem.grid, problem.time
    drift = problem.drift or IdentityDrift(grid.dim)
    model = problem.model
    theta = report.theta
    ev = theta_evaluator(problem.base_evaluator(), theta)
    x = grid.coords
    ts = tg.nodes
    nu, dt = problem.nu, tg.dt
    lap = laplacian_matrix(grid)
    hjb_opts = hjb_opts or HjbOptions()
    th = theta if theta > 0 else 1.0
    u, m = report.u, report.m
    res = {"mu_alpha_res": 0.0, "mu_b_res": 0.0,
           "hjb_res": float(np.abs(u[-1] - theta * problem.terminal(grid, m[-1])).max()),
           "fpk_res": 0.0}
    for n in range(tg.steps + 1):
        law = report.laws[n]
        supp = grid.support(m[n])
        alpha = drift.inverse(ts[n], x, law.control / th, law.summary)
        s_alpha = model.summarize(grid, m[n], alpha)
        res["mu_alpha_res"] = max(res["mu_alpha_res"],
                                  float(np.abs(s_alpha.vector() - law.summary.vector()).max(initial=0.0)))
        if theta > 0:
            p = grid.gradient(u[n])
            foc = model.grad_alpha(ts[n], x, alpha, s_alpha) + np.einsum(
                "...kj,...k->...j", drift.jacobian(ts[n], x, alpha, s_alpha), p)
            if supp.any():
                res["mu_b_res"] = max(res["mu_b_res"], float(_norm(foc)[supp].max()))
        if n == tg.steps:
            break
        velocity = th * drift.apply(ts[n], x, alpha, s_alpha)
        mat = fpk_matrix(grid, velocity, nu, dt)
        res["fpk_res"] = max(res["fpk_res"], float(np.abs(mat @ m[n + 1].ravel() - m[n].ravel()).max()))
        pn = hjb_gradient(grid, u[n + 1], ev, ts[n], law.summary, hjb_opts)
        if theta > 0:
            _, b_opt = ev.hamiltonian(ts[n], x, pn, law.summary)
            a_opt = drift.inverse(ts[n], x, b_opt / th, s_alpha)
            ham = theta * (-_dot(pn, drift.apply(ts[n], x, a_opt, s_alpha))
                           - model.lagrangian(ts[n], x, a_opt, s_alpha))
        else:
            ham = 0.0
        f = theta * problem.coupling(grid, m[n], ts[n]) if theta else 0.0
        lhs = u[n] - nu * dt * (lap @ u[n].ravel()).reshape(grid.shape)
        res["hjb_res"] = max(res["hjb_res"], float(np.abs(lhs - u[n + 1] + dt * (ham - f)).max()))
    res["tolerance"] = tol
    res["passed"] = bool(max(res["mu_alpha_res"], res["mu_b_res"], res["hjb_res"], res["fpk_res"]) <= tol)
    return res


__all__ = [
    "DriftModel", "IdentityDrift", "LinearDrift", "SaturatingDrift", "make_drift",
    "TransformedLagrangian", "DriftTransformedEvaluator", "transformed_hamiltonian",
    "push_control_law", "recover_control_law", "round_trip_errors", "drift_audit",
    "equivalence_check",
]
