"""Convex conjugates ``H(t,x,p,mu) = sup_a -p.a - L(t,x,a,mu)`` and their optimizers."""

from __future__ import annotations

import numpy as np

from .errors import NumericFailure, ParameterError
from .models import LagrangianModel


def _dot(a, b):
    return np.sum(a * b, axis=-1)


class HamiltonianEvaluator:
    """Legendre transform of a :class:`LagrangianModel`.

    ``mode="auto"`` uses the model's closed form when it has one and the
    numeric route otherwise. The numeric route minimizes ``L + p.a`` node by
    node with damped Newton, cold-started at zero unless warm-started.
    """

    def __init__(self, model: LagrangianModel, mode="auto", tol=1e-10, max_iter=100):
        if mode not in ("auto", "closed_form", "numeric"):
            raise ParameterError(f"unknown Legendre mode {mode!r}")
        if mode == "closed_form" and not model.has_closed_form:
            raise ParameterError(f"{type(model).__name__} has no closed-form Hamiltonian")
        self.model = model
        self.mode = "closed_form" if (mode == "auto" and model.has_closed_form) else (
            "numeric" if mode == "auto" else mode)
        self.tol = tol
        self.max_iter = max_iter

    # protocol shared with the theta-scaled and drift-transformed evaluators
    @property
    def dim(self):
        return self.model.dim

    @property
    def mu_independent(self):
        return self.model.mu_independent

    def summarize(self, grid, m, alpha):
        return self.model.summarize(grid, m, alpha)

    def lagrangian(self, t, x, alpha, s):
        return self.model.lagrangian(t, x, alpha, s)

    def grad_alpha(self, t, x, alpha, s):
        return self.model.grad_alpha(t, x, alpha, s)

    def lagrangian_difference(self, t, x, alpha, s1, s2):
        return self.model.lagrangian_difference(t, x, alpha, s1, s2)

    def hamiltonian(self, t, x, p, s, warm=None):
        """Return ``(H, alpha_star)`` broadcast over the leading axes of ``p``."""
        p = np.asarray(p, dtype=float)
        x = np.broadcast_to(np.asarray(x, dtype=float), p.shape)
        if self.mode == "closed_form":
            h, a = self.model.closed_form(t, x, p, s)
            return np.broadcast_to(h, p.shape[:-1]).astype(float), np.broadcast_to(a, p.shape).astype(float)
        lead = p.shape[:-1]
        d = p.shape[-1]
        pf = p.reshape(-1, d)
        xf = x.reshape(-1, d)
        start = np.zeros_like(pf) if warm is None else np.broadcast_to(warm, p.shape).reshape(-1, d)
        astar = _newton_conjugate(self.model, t, xf, pf, s, start, self.tol, self.max_iter)
        h = -_dot(pf, astar) - self.model.lagrangian(t, xf, astar, s)
        return h.reshape(lead), astar.reshape(p.shape)

    def grad_p(self, t, x, p, s, warm=None):
        return -self.hamiltonian(t, x, p, s, warm)[1]

    def grad_x(self, t, x, p, s):
        """Envelope formula ``H_x = -L_x`` at the optimizer."""
        _, a = self.hamiltonian(t, x, p, s)
        x = np.broadcast_to(np.asarray(x, dtype=float), np.shape(p))
        return -self.model.grad_x(t, x, a, s)


def _newton_conjugate(model, t, x, p, s, start, tol, max_iter):
    """Minimize ``L(t, x_i, a) + p_i . a`` independently for each row ``i``."""
    n, d = p.shape
    a = np.array(start, dtype=float)
    g = model.grad_alpha(t, x, a, s) + p
    gn = np.sqrt(_dot(g, g))
    for _ in range(max_iter):
        active = np.flatnonzero(gn > tol)
        if active.size == 0:
            return a
        xa, pa, aa, ga = x[active], p[active], a[active], g[active]
        direc = -ga
        hess = model.hess_alpha(t, xa, aa, s)
        finite = np.all(np.isfinite(hess.reshape(active.size, -1)), axis=1)
        if finite.any():
            with np.errstate(all="ignore"):
                try:
                    newton = -np.linalg.solve(hess[finite], ga[finite][..., None])[..., 0]
                except np.linalg.LinAlgError:
                    newton = np.full_like(ga[finite], np.nan)
            ok = np.all(np.isfinite(newton), axis=1) & (_dot(newton, ga[finite]) < 0)
            sub = direc[finite]
            sub[ok] = newton[ok]
            direc[finite] = sub
        f0 = model.lagrangian(t, xa, aa, s) + _dot(pa, aa)
        slope = _dot(ga, direc)
        step = np.ones(active.size)
        done = np.zeros(active.size, dtype=bool)
        for _ in range(60):
            pend = np.flatnonzero(~done)
            if pend.size == 0:
                break
            trial = aa[pend] + step[pend, None] * direc[pend]
            with np.errstate(all="ignore"):
                ft = model.lagrangian(t, xa[pend], trial, s) + _dot(pa[pend], trial)
                gt = model.grad_alpha(t, xa[pend], trial, s) + pa[pend]
            gtn = np.sqrt(_dot(gt, gt))
            good = np.isfinite(ft) & np.isfinite(gtn) & (
                (ft <= f0[pend] + 1e-4 * step[pend] * slope[pend]) | (gtn < 0.9 * gn[active][pend])
            )
            hit = pend[good]
            aa[hit] = trial[good]
            ga[hit] = gt[good]
            done[hit] = True
            step[pend[~good]] *= 0.5
        a[active] = aa
        g[active] = ga
        gn[active] = np.sqrt(_dot(ga, ga))
        if not done.any():
            break
    if np.any(gn > tol):
        raise NumericFailure(
            f"Legendre inner problem did not reach |grad| <= {tol:g} (worst {gn.max():.3e})",
            best=a, grad_norm=gn,
        )
    return a
