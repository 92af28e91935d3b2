"""Backward semi-implicit HJB and forward conservative Fokker-Planck steps.

HJB step (implicit diffusion, explicit Hamiltonian on the lagged gradient)::

    (I - nu dt Lap_h) u_n = u_{n+1} - dt (H(t_n, x, grad_h u_{n+1}, mu_n) - f(t_n, x, m_n))

FPK step (drift ``alpha = -H_p``)::

    (I + dt (-nu Lap_h + D(alpha))) m_{n+1} = m_n

``D(alpha)`` is the flux-form divergence of ``alpha m`` with velocities
averaged to cell interfaces and upwinded fluxes. Its transpose ``A(alpha)``
is the matching HJB-side advection operator (``-alpha . grad`` upwinded).
Both the Laplacian and ``D`` have zero column sums, so mass is conserved up
to the linear solve, and the system matrix is an M-matrix, so ``m >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized, splu

from .errors import ParameterError, StepError
from .grid import DensityPath, TimeGrid, TorusGrid


@dataclass(frozen=True)
class HjbOptions:
    gradient: str = "central"

    def __post_init__(self):
        if self.gradient not in ("central", "upwind"):
            raise ParameterError(f"unknown HJB gradient scheme {self.gradient!r}")


@dataclass(frozen=True)
class FpkOptions:
    negativity: str = "error"
    negativity_tol: float = 1e-12

    def __post_init__(self):
        if self.negativity not in ("error", "clamp"):
            raise ParameterError(f"unknown negativity policy {self.negativity!r}")


def _flat_index(grid: TorusGrid):
    return np.arange(grid.size).reshape(grid.shape)


@lru_cache(maxsize=32)
def laplacian_matrix(grid: TorusGrid) -> sp.csr_matrix:
    n = grid.points
    one = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
    one[0, n - 1] = 1.0
    one[n - 1, 0] = 1.0
    one = one.tocsr() / grid.spacing**2
    if grid.dim == 1:
        return one
    eye = sp.identity(n, format="csr")
    return (sp.kron(one, eye) + sp.kron(eye, one)).tocsr()


@lru_cache(maxsize=32)
def _interface_pattern(grid: TorusGrid):
    idx = _flat_index(grid)
    j = idx.ravel()
    rows, cols = [], []
    for i in range(grid.dim):
        nb = np.roll(idx, -1, axis=i).ravel()
        rows += [j, j, nb, nb]
        cols += [j, nb, j, nb]
    return np.concatenate(rows), np.concatenate(cols)


def _interface_values(grid: TorusGrid, alpha):
    alpha = grid.check_vector(alpha, "alpha")
    h = grid.spacing
    vals = []
    for i in range(grid.dim):
        a = alpha[..., i]
        v = 0.5 * (a + np.roll(a, -1, axis=i)).ravel()
        vp, vm = np.maximum(v, 0.0) / h, np.minimum(v, 0.0) / h
        # flux through the interface between j and its +e_i neighbour: vp m_j + vm m_nb
        vals += [vp, vm, -vp, -vm]
    return np.concatenate(vals)


def advection_divergence_matrix(grid: TorusGrid, alpha) -> sp.csr_matrix:
    """Matrix ``D`` with ``D m`` = upwinded flux divergence of ``alpha m``."""
    rows, cols = _interface_pattern(grid)
    return sp.csr_matrix((_interface_values(grid, alpha), (rows, cols)), shape=(grid.size, grid.size))


def advection_matrix(grid: TorusGrid, alpha) -> sp.csr_matrix:
    """HJB-side advection ``A = D^T``."""
    return advection_divergence_matrix(grid, alpha).T.tocsr()


@lru_cache(maxsize=32)
def _diffusion_solver(grid: TorusGrid, nu: float, dt: float):
    mat = sp.identity(grid.size, format="csc") - nu * dt * laplacian_matrix(grid).tocsc()
    return factorized(mat.tocsc())


def implicit_heat_solve(grid: TorusGrid, rhs, nu, dt) -> np.ndarray:
    """Solve ``(I - nu dt Lap_h) u = rhs`` by a cached sparse LU factorization."""
    solve = _diffusion_solver(grid, float(nu), float(dt))
    return solve(np.ascontiguousarray(rhs, dtype=float).ravel()).reshape(grid.shape)


def hjb_gradient(grid: TorusGrid, u, evaluator, t, summary, opts: HjbOptions):
    p = grid.gradient(u)
    if opts.gradient == "upwind":
        # transport velocity of the backward equation is H_p
        direction = evaluator.grad_p(t, grid.coords, p, summary)
        p = grid.gradient(u, "upwind", direction)
    return p


def hjb_step_backward(grid: TorusGrid, u_next, t, summary, f_values, evaluator, nu, dt,
                      opts=HjbOptions(), time_index=None):
    u_next = grid.check_scalar(u_next, "u")
    p = hjb_gradient(grid, u_next, evaluator, t, summary, opts)
    ham, _ = evaluator.hamiltonian(t, grid.coords, p, summary)
    rhs = u_next - dt * (ham - f_values)
    u = implicit_heat_solve(grid, rhs, nu, dt)
    if not np.all(np.isfinite(u)):
        raise StepError("non-finite value function", time_index)
    return u


@lru_cache(maxsize=32)
def _diffusion_pattern(grid: TorusGrid, nu: float, dt: float):
    lap = (sp.identity(grid.size) - nu * dt * laplacian_matrix(grid)).tocoo()
    rows, cols = _interface_pattern(grid)
    return np.concatenate([lap.row, rows]), np.concatenate([lap.col, cols]), lap.data


def fpk_matrix(grid: TorusGrid, alpha, nu, dt) -> sp.csc_matrix:
    """``I + dt (-nu Lap_h + D(alpha))`` assembled in one pass."""
    rows, cols, diff = _diffusion_pattern(grid, float(nu), float(dt))
    vals = np.concatenate([diff, dt * _interface_values(grid, alpha)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def fpk_step_forward(grid: TorusGrid, m, alpha, nu, dt, opts=FpkOptions(), time_index=None,
                     report=None):
    """One implicit step of the Fokker-Planck equation with drift ``alpha``.

    ``report`` (a list) collects clamp events under the ``"clamp"`` policy.
    """
    m = grid.check_scalar(m, "density")
    mat = fpk_matrix(grid, alpha, nu, dt)
    out = splu(mat).solve(m.ravel()).reshape(grid.shape)
    if not np.all(np.isfinite(out)):
        raise StepError("non-finite density", time_index)
    low = float(out.min())
    if low < -opts.negativity_tol:
        if opts.negativity == "error":
            raise StepError(f"negative density {low:.3e}", time_index)
        mass = grid.mass(out)
        out = np.maximum(out, 0.0)
        out *= mass / grid.mass(out)
        if report is not None:
            report.append({"time_index": time_index, "min": low})
    return out


def solve_hjb(grid: TorusGrid, time: TimeGrid, terminal, summaries, densities, coupling,
              evaluator, nu, opts=HjbOptions(), source_scale=1.0):
    """Backward sweep from ``u_M = terminal``.

    ``summaries[n]`` and ``densities[n]`` enter the step producing ``u_n``;
    the source is ``source_scale * coupling(grid, m_n, t_n)``.
    """
    u = np.empty((time.steps + 1,) + grid.shape)
    u[-1] = grid.check_scalar(terminal, "terminal")
    ts = time.nodes
    for n in range(time.steps - 1, -1, -1):
        f = source_scale * coupling(grid, densities[n], ts[n]) if source_scale else 0.0
        u[n] = hjb_step_backward(grid, u[n + 1], ts[n], summaries[n], f, evaluator, nu, time.dt,
                                 opts, time_index=n)
    return u


def solve_fpk(grid: TorusGrid, time: TimeGrid, m0, controls, nu, opts=FpkOptions()):
    """Forward sweep with prescribed controls ``controls[n]`` on ``[t_n, t_{n+1}]``."""
    m = np.empty((time.steps + 1,) + grid.shape)
    m[0] = grid.check_scalar(m0, "m0")
    for n in range(time.steps):
        m[n + 1] = fpk_step_forward(grid, m[n], controls[n], nu, time.dt, opts, time_index=n)
    return DensityPath(grid, time, m)


def heat_flow(grid: TorusGrid, time: TimeGrid, m0, nu):
    zero = np.zeros(grid.shape + (grid.dim,))
    return solve_fpk(grid, time, m0, [zero] * time.steps, nu)
