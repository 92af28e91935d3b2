"""Outer forward-backward iteration for the coupled HJB / FPK / control-law system."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import FixedPointFailure, ParameterError
from .fixed_point import FixedPointOptions, apriori_check, fixed_point_residual, solve_mu
from .grid import DensityPath, TimeGrid, TorusGrid
from .laws import ControlLaw
from .legendre import HamiltonianEvaluator
from .models import (
    LagrangianModel,
    SmoothedDensityCost,
    ZeroCoupling,
    coupling_monotonicity_gap,
    monotonicity_gap,
)
from .pde import (
    FpkOptions,
    HjbOptions,
    fpk_matrix,
    fpk_step_forward,
    hjb_gradient,
    laplacian_matrix,
    solve_hjb,
)

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class ProblemSpec:
    """A full problem instance on the torus (or a periodized box)."""

    grid: TorusGrid
    time: TimeGrid
    nu: float
    model: LagrangianModel
    m0: np.ndarray
    coupling: object = field(default_factory=ZeroCoupling)
    terminal: object = field(default_factory=SmoothedDensityCost)
    drift: object = None
    legendre_mode: str = "auto"
    legendre_tol: float = 1e-10

    def __post_init__(self):
        if not self.nu > 0:
            raise ParameterError("nu must be positive")
        m0 = self.grid.check_scalar(self.m0, "m0")
        if m0.min() < 0:
            raise ParameterError("m0 must be nonnegative")
        mass = self.grid.mass(m0)
        if abs(mass - 1) > 1e-10:
            raise ParameterError(f"m0 must have unit mass, got {mass:.12g}")
        self.m0 = m0

    @property
    def second_moment(self) -> float:
        return self.grid.second_moment(self.m0)

    def base_evaluator(self):
        ev = HamiltonianEvaluator(self.model, self.legendre_mode, tol=self.legendre_tol)
        if self.drift is not None:
            from .drift import DriftTransformedEvaluator

            ev = DriftTransformedEvaluator(ev, self.drift)
        return ev


class ThetaEvaluator:
    """Homotopy-scaled Hamiltonian ``H_theta(p, mu) = theta H(p, Theta mu)``.

    ``Theta`` divides controls by ``theta``; the matching Lagrangian is
    ``theta L(alpha / theta, Theta mu)``. ``theta = 0`` is the uncontrolled
    problem (``H = 0``, ``alpha = 0``).
    """

    def __init__(self, base, theta):
        if not 0 <= theta <= 1:
            raise ParameterError("theta must lie in [0, 1]")
        self.base = base
        self.theta = float(theta)

    @property
    def dim(self):
        return self.base.dim

    @property
    def mu_independent(self):
        return self.theta == 0 or self.base.mu_independent

    def summarize(self, grid, m, alpha):
        if self.theta == 0:
            return self.base.summarize(grid, m, np.zeros_like(alpha))
        return self.base.summarize(grid, m, np.asarray(alpha) / self.theta)

    def hamiltonian(self, t, x, p, s, warm=None):
        p = np.asarray(p, float)
        if self.theta == 0:
            return np.zeros(p.shape[:-1]), np.zeros(p.shape)
        w = None if warm is None else np.asarray(warm) / self.theta
        h, a = self.base.hamiltonian(t, x, p, s, warm=w)
        return self.theta * h, self.theta * a

    def grad_p(self, t, x, p, s, warm=None):
        return -self.hamiltonian(t, x, p, s, warm)[1]

    def grad_x(self, t, x, p, s):
        if self.theta == 0:
            return np.zeros(np.shape(p))
        return self.theta * self.base.grad_x(t, x, p, s)

    def lagrangian(self, t, x, alpha, s):
        if self.theta == 0:
            return np.where(np.all(np.asarray(alpha) == 0, axis=-1), 0.0, np.inf)
        return self.theta * self.base.lagrangian(t, x, np.asarray(alpha) / self.theta, s)

    def lagrangian_difference(self, t, x, alpha, s1, s2):
        if self.theta == 0:
            return np.zeros(np.shape(alpha)[:-1])
        diff = getattr(self.base, "lagrangian_difference", None)
        a = np.asarray(alpha) / self.theta
        if diff is None:
            return self.theta * (self.base.lagrangian(t, x, a, s1) - self.base.lagrangian(t, x, a, s2))
        return self.theta * diff(t, x, a, s1, s2)


def theta_evaluator(base, theta):
    return base if theta == 1 else ThetaEvaluator(base, theta)


@dataclass(frozen=True)
class OuterOptions:
    strategy: str = "picard"
    damping: float = 0.5
    tol: float = 1e-7
    max_iter: int = 200
    schedule: tuple = DEFAULT_SCHEDULE
    stall_window: int = 5
    stall_ratio: float = 0.99
    fallback: bool = True
    record_iterates: bool = False
    inner: FixedPointOptions = FixedPointOptions()
    hjb: HjbOptions = HjbOptions()
    fpk: FpkOptions = FpkOptions()

    def __post_init__(self):
        if self.strategy not in ("picard", "fictitious_play"):
            raise ParameterError(f"unknown outer strategy {self.strategy!r}")
        if not 0 < self.damping <= 1:
            raise ParameterError("outer damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ParameterError("outer tolerance must be positive")
        sched = tuple(float(s) for s in self.schedule)
        if not sched or any(b < a for a, b in zip(sched, sched[1:])):
            raise ParameterError("homotopy schedule must be nonempty and nondecreasing")
        if sched[0] < 0 or sched[-1] > 1:
            raise ParameterError("homotopy schedule must lie in [0, 1]")
        object.__setattr__(self, "schedule", sched)


@dataclass
class IterateState:
    """A forward-consistent triple: laws solve the fixed point against ``grad u``
    and the densities solve the FPK equation with those laws."""

    theta: float
    iteration: int
    u: np.ndarray
    m: np.ndarray
    laws: list


@dataclass
class SolveReport:
    grid: TorusGrid
    time: TimeGrid
    u: np.ndarray
    m: np.ndarray
    laws: list
    converged: bool
    theta: float
    history: list
    diagnostics: dict
    timings: dict
    events: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    @property
    def density(self) -> DensityPath:
        return DensityPath(self.grid, self.time, self.m)

    @property
    def controls(self) -> np.ndarray:
        return np.stack([law.control for law in self.laws])

    @property
    def mean_controls(self) -> np.ndarray:
        return np.stack([law.mean_control for law in self.laws])

    @property
    def residuals(self):
        last = self.history[-1] if self.history else {}
        return tuple(last.get(k, np.nan) for k in ("hjb_res", "fpk_res", "mu_res"))

    def state(self) -> IterateState:
        return IterateState(self.theta, len(self.history), self.u, self.m, self.laws)


# ---------------------------------------------------------------------------


def forward_sweep(problem: ProblemSpec, u, evaluator, opts: OuterOptions, warm_laws=None):
    """Laws and densities induced by a value function path ``u``."""
    grid, tg = problem.grid, problem.time
    ts = tg.nodes
    m = np.empty((tg.steps + 1,) + grid.shape)
    m[0] = problem.m0
    laws = []
    for n in range(tg.steps + 1):
        p = grid.gradient(u[n])
        warm = None if warm_laws is None else warm_laws[n].control
        try:
            law = solve_mu(grid, ts[n], p, m[n], evaluator, opts.inner, warm=warm)
        except FixedPointFailure as exc:
            exc.time_index = n
            raise
        laws.append(law)
        if n < tg.steps:
            m[n + 1] = fpk_step_forward(grid, m[n], law.control, problem.nu, tg.dt, opts.fpk, time_index=n)
    return m, laws


def residuals(problem: ProblemSpec, u, m, laws, evaluator=None, theta=1.0, hjb_opts=HjbOptions()):
    """Defects of the discrete system at ``(u, m, laws)``.

    ``hjb_res``: max over steps of ``|(I - nu dt Lap) u_n - u_{n+1} + dt (H - theta f)|``
    plus the terminal defect ``|u_M - theta g(m_M)|``; ``fpk_res``: max of
    ``|M_n m_{n+1} - m_n|`` with ``M_n`` the FPK system matrix; ``mu_res``: max
    over nodes of the fixed-point defect on the numerical support of ``m_n``.
    """
    grid, tg = problem.grid, problem.time
    ev = evaluator if evaluator is not None else theta_evaluator(problem.base_evaluator(), theta)
    dt, nu = tg.dt, problem.nu
    ts = tg.nodes
    lap = laplacian_matrix(grid)
    hjb = float(np.abs(u[-1] - theta * problem.terminal(grid, m[-1])).max())
    fpk = 0.0
    mu = 0.0
    for n in range(tg.steps + 1):
        law = laws[n]
        mu = max(mu, fixed_point_residual(grid, ts[n], grid.gradient(u[n]), law, ev))
        if n == tg.steps:
            break
        p = hjb_gradient(grid, u[n + 1], ev, ts[n], law.summary, hjb_opts)
        ham, _ = ev.hamiltonian(ts[n], grid.coords, p, law.summary)
        f = theta * problem.coupling(grid, m[n], ts[n]) if theta else 0.0
        lhs = u[n] - nu * dt * (lap @ u[n].ravel()).reshape(grid.shape)
        hjb = max(hjb, float(np.abs(lhs - u[n + 1] + dt * (ham - f)).max()))
        mat = fpk_matrix(grid, law.control, nu, dt)
        fpk = max(fpk, float(np.abs(mat @ m[n + 1].ravel() - m[n].ravel()).max()))
    return hjb, fpk, mu


def _density_change(grid, m1, m2):
    return max(grid.integrate(np.abs(a - b)) for a, b in zip(m1, m2))


def _control_change(grid, laws1, laws2):
    worst = 0.0
    for l1, l2 in zip(laws1, laws2):
        supp = grid.support(l1.density) | grid.support(l2.density)
        if supp.any():
            d = np.sqrt(np.sum((l1.control - l2.control) ** 2, axis=-1))
            worst = max(worst, float(d[supp].max()))
    return worst


def _initial_u(problem: ProblemSpec, theta):
    """Constant ``theta * mean g(., m(T))`` with ``m`` the heat flow of ``m0``."""
    from .pde import heat_flow

    grid = problem.grid
    mT = heat_flow(grid, problem.time, problem.m0, problem.nu)[-1]
    level = theta * float(np.mean(problem.terminal(grid, mT)))
    return np.full((problem.time.steps + 1,) + grid.shape, level)


def solve(problem: ProblemSpec, opts: OuterOptions = OuterOptions(), initial_u=None) -> SolveReport:
    """Continuation over the homotopy schedule with an outer fixed point per stage.

    Each outer iteration sweeps forward (control fixed point then FPK step at
    every time node, with ``p = grad_h u``), solves the HJB equation backward
    against the resulting laws and densities, and mixes the new value
    function into the current one (damped Picard, or running averages with
    weights ``1/j`` for fictitious play). Stalled Picard iterations fall back
    to fictitious play.
    """
    grid, tg = problem.grid, problem.time
    base = problem.base_evaluator()
    t_start = _time.perf_counter()
    history, events, iterates = [], [], []
    u = None if initial_u is None else np.array(initial_u, dtype=float)
    m = laws = None
    converged = False
    theta = opts.schedule[0]
    stage_times = {}
    for theta in opts.schedule:
        stage_start = _time.perf_counter()
        ev = theta_evaluator(base, theta)
        if u is None:
            u = _initial_u(problem, theta)
        strategy = opts.strategy
        fp_count = 0
        prev_m = prev_laws = None
        converged = False
        for k in range(opts.max_iter):
            try:
                m, laws = forward_sweep(problem, u, ev, opts, warm_laws=prev_laws)
            except FixedPointFailure as exc:
                exc.theta, exc.outer_iteration = theta, k
                raise
            terminal = theta * problem.terminal(grid, m[-1])
            u_hat = solve_hjb(grid, tg, terminal, [l.summary for l in laws], m, problem.coupling,
                              ev, problem.nu, opts.hjb, source_scale=theta)
            hjb_res, fpk_res, mu_res = residuals(problem, u, m, laws, ev, theta, opts.hjb)
            du = float(np.abs(u_hat - u).max())
            dm = np.inf if prev_m is None else _density_change(grid, m, prev_m)
            da = np.inf if prev_laws is None else _control_change(grid, laws, prev_laws)
            row = {"theta": theta, "iteration": k, "strategy": strategy, "du": du, "dm": dm,
                   "dalpha": da, "hjb_res": hjb_res, "fpk_res": fpk_res, "mu_res": mu_res}
            history.append(row)
            if opts.record_iterates:
                iterates.append(IterateState(theta, k, u.copy(), m.copy(), list(laws)))
            log.debug("theta=%g it=%d du=%.3e dm=%.3e da=%.3e", theta, k, du, dm, da)
            if max(du, dm, da, hjb_res, fpk_res, mu_res) <= opts.tol:
                converged = True
                break
            if not np.all(np.isfinite(u_hat)):
                break
            if strategy == "picard":
                u = u + opts.damping * (u_hat - u)
                if opts.fallback and _stalled(history, theta, opts):
                    strategy = "fictitious_play"
                    events.append({"theta": theta, "iteration": k, "event": "fallback_fictitious_play"})
            else:
                fp_count += 1
                u = u + (u_hat - u) / fp_count
            prev_m, prev_laws = m, laws
        stage_times[str(theta)] = _time.perf_counter() - stage_start
        if not converged:
            events.append({"theta": theta, "event": "not_converged"})
            break
    elapsed = _time.perf_counter() - t_start
    report = SolveReport(grid, tg, u, m, laws, converged, theta, history, {},
                         {"total": elapsed, "stages": stage_times}, events, iterates)
    report.diagnostics = diagnostics(problem, report)
    return report


def _stalled(history, theta, opts):
    rows = [r for r in history if r["theta"] == theta]
    if len(rows) <= opts.stall_window:
        return False
    metric = lambda r: max(r["du"], r["hjb_res"])
    old, new = metric(rows[-1 - opts.stall_window]), metric(rows[-1])
    return new > opts.stall_ratio * old


# ---------------------------------------------------------------------------
# diagnostics


def diagnostics(problem: ProblemSpec, report: SolveReport) -> dict:
    grid, tg = problem.grid, problem.time
    model = problem.model
    masses = np.array([grid.mass(mm) for mm in report.m])
    grads = [grid.gradient(un) for un in report.u]
    apriori = [apriori_check(law, p, model.c0, model.q, model.q_prime)
               for law, p in zip(report.laws, grads)]
    ev = theta_evaluator(problem.base_evaluator(), report.theta)
    lam_inf = [law.lambda_inf for law in report.laws]
    gaps = []
    for n in range(0, tg.steps, max(1, tg.steps // 8)):
        gaps.append(monotonicity_gap(ev, tg.nodes[n], report.laws[n], report.laws[n + 1]))
    cgap_f = coupling_monotonicity_gap(problem.coupling, grid, report.m[0], report.m[-1])
    cgap_g = coupling_monotonicity_gap(problem.terminal, grid, report.m[0], report.m[-1])
    return {
        "mass_error": float(np.abs(masses - 1).max()),
        "min_density": float(report.m.min()),
        "boundary_mass": float(max(grid.boundary_mass(mm) for mm in report.m)),
        "m0_second_moment": problem.second_moment,
        "m0_second_moment_ok": bool(problem.second_moment <= model.c0),
        "u_sup": float(np.abs(report.u).max()),
        "grad_u_sup": float(max(np.sqrt(np.sum(g**2, axis=-1)).max() for g in grads)),
        "lambda_inf_max": float(max(lam_inf)),
        "apriori_ok": bool(all(a["ok"] for a in apriori)),
        "apriori_margin_qp": float(min(a["margin_qp"] for a in apriori)),
        "apriori_margin_inf": float(min(a["margin_inf"] for a in apriori)),
        "monotonicity_gap_min": float(min(gaps)) if gaps else 0.0,
        "coupling_gap_f": float(cgap_f),
        "coupling_gap_g": float(cgap_g),
        "maximum_principle_bound": maximum_principle_bound(problem, report),
    }


def maximum_principle_bound(problem: ProblemSpec, report: SolveReport) -> float:
    """``||g||_inf + T (||f||_inf + max_n sup_x |H(t_n, x, 0, mu_n)|)`` at the reached theta."""
    grid, tg = problem.grid, problem.time
    ev = theta_evaluator(problem.base_evaluator(), report.theta)
    th = report.theta
    zero = np.zeros(grid.shape + (grid.dim,))
    g = th * np.abs(problem.terminal(grid, report.m[-1])).max()
    f = max(th * np.abs(problem.coupling(grid, mm, t)).max() for mm, t in zip(report.m, tg.nodes))
    h0 = max(np.abs(ev.hamiltonian(t, grid.coords, zero, law.summary)[0]).max()
             for law, t in zip(report.laws, tg.nodes))
    return float(g + tg.horizon * (f + h0))


# ---------------------------------------------------------------------------
# uniqueness and the cross-duality identity


@dataclass
class ProbeReport:
    distances: list
    converged: list
    monotone_regime: bool
    monotonicity_gap_min: float
    coupling_gap_min: float
    tolerance: float
    reports: list = field(default_factory=list, repr=False)

    @property
    def inconclusive(self) -> bool:
        return not all(self.converged)

    @property
    def max_distance(self) -> float:
        return max((max(d["u"], d["m"], d["mean_control"]) for d in self.distances), default=0.0)

    @property
    def unique(self) -> bool:
        return (not self.inconclusive) and self.max_distance <= 10 * self.tolerance

    def to_dict(self):
        return {
            "distances": self.distances, "converged": self.converged,
            "monotone_regime": self.monotone_regime,
            "monotonicity_gap_min": self.monotonicity_gap_min,
            "coupling_gap_min": self.coupling_gap_min, "tolerance": self.tolerance,
            "inconclusive": self.inconclusive, "max_distance": self.max_distance,
            "unique_within_tolerance": self.unique,
        }


def random_initialization(problem: ProblemSpec, seed, amplitude=1.0):
    """Smooth random value-function path: a few random Fourier modes per time node."""
    rng = np.random.default_rng(seed)
    grid, tg = problem.grid, problem.time
    x = grid.coords
    u = np.zeros((tg.steps + 1,) + grid.shape)
    for _ in range(3):
        k = rng.integers(1, 4, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(-amplitude, amplitude)
        shape = np.cos(2 * np.pi * np.sum(k * x, axis=-1) / grid.radius + phase)
        slope = rng.uniform(0.5, 1.5)
        ramp = np.linspace(slope, 1.0, tg.steps + 1).reshape((-1,) + (1,) * grid.dim)
        u += amp * ramp * shape
    return u


def sample_monotonicity(problem: ProblemSpec, seed=0, pairs=8):
    """Minimum sampled gaps of the Lagrangian and of f, g over random law pairs."""
    rng = np.random.default_rng(seed)
    grid = problem.grid
    ev = problem.base_evaluator()
    x = grid.coords
    lgap, cgap = np.inf, np.inf
    for _ in range(pairs):
        laws = []
        for _ in range(2):
            m = grid.normalize(np.exp(rng.normal(size=grid.shape)))
            a = rng.normal(scale=rng.uniform(0.1, 3.0), size=grid.shape + (grid.dim,)) \
                + rng.normal(size=grid.dim)
            laws.append(ControlLaw(grid, m, a, ev.summarize(grid, m, a)))
        lgap = min(lgap, monotonicity_gap(ev, 0.0, *laws))
        m1, m2 = laws[0].density, laws[1].density
        cgap = min(cgap, coupling_monotonicity_gap(problem.coupling, grid, m1, m2),
                   coupling_monotonicity_gap(problem.terminal, grid, m1, m2))
    return float(lgap), float(cgap)


def uniqueness_probe(problem: ProblemSpec, opts: OuterOptions, initializations, workers=1):
    """Solve from several initial value functions and compare the results.

    ``initializations`` are value-function paths (arrays) or ``None`` for the
    default constant start. Runs use the last homotopy value only, so the
    initial guess is not wiped by continuation.
    """
    lgap, cgap = sample_monotonicity(problem)
    run_opts = OuterOptions(**{**opts.__dict__, "schedule": (opts.schedule[-1],)})
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_probe_run, [(problem, run_opts, init) for init in initializations]))
    else:
        reports = [solve(problem, run_opts, initial_u=init) for init in initializations]
    dists = []
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            a, b = reports[i], reports[j]
            dists.append({
                "pair": [i, j],
                "u": float(np.abs(a.u - b.u).max()),
                "m": float(np.abs(a.m - b.m).max()),
                "mean_control": float(np.abs(a.mean_controls - b.mean_controls).max()),
            })
    return ProbeReport(dists, [r.converged for r in reports], lgap >= -1e-10 and cgap >= -1e-10,
                       lgap, cgap, opts.tol, reports)


def _probe_run(args):
    problem, opts, init = args
    return solve(problem, opts, initial_u=init)


def energy_identity(problem: ProblemSpec, s1, s2, evaluator=None, theta=1.0) -> float:
    """Discrete cross-duality integral for two forward-consistent states.

    Sum over ``n < M`` of ``dt h^d sum_x`` of

    ``[p1 - p2] . H_p(p1, mu1) - H(p1, mu1) + H(p2, mu2)`` against ``m1``,
    the symmetric term against ``m2``, ``(f(m1) - f(m2)) (m1 - m2)``, plus
    ``h^d sum_x (g(m1_M) - g(m2_M)) (m1_M - m2_M)``, with ``p_i = grad_h u_i``
    the momenta the laws were solved against. Nonnegative whenever the
    Lagrangian and the couplings are monotone.
    """
    grid, tg = problem.grid, problem.time
    ev = evaluator if evaluator is not None else theta_evaluator(problem.base_evaluator(), theta)
    x = grid.coords
    ts = tg.nodes
    total = 0.0
    for n in range(tg.steps):
        l1, l2 = s1.laws[n], s2.laws[n]
        p1, p2 = grid.gradient(s1.u[n]), grid.gradient(s2.u[n])
        h1, a1 = ev.hamiltonian(ts[n], x, p1, l1.summary)
        h2, a2 = ev.hamiltonian(ts[n], x, p2, l2.summary)
        # H_p = -alpha_star
        t1 = np.sum((p1 - p2) * (-a1), axis=-1) - h1 + h2
        t2 = np.sum((p2 - p1) * (-a2), axis=-1) - h2 + h1
        df = theta * (problem.coupling(grid, s1.m[n], ts[n]) - problem.coupling(grid, s2.m[n], ts[n]))
        total += tg.dt * (grid.integrate(t1, s1.m[n]) + grid.integrate(t2, s2.m[n])
                          + grid.integrate(df * (s1.m[n] - s2.m[n])))
    dg = theta * (problem.terminal(grid, s1.m[-1]) - problem.terminal(grid, s2.m[-1]))
    total += grid.integrate(dg * (s1.m[-1] - s2.m[-1]))
    return float(total)


energy_identity_check = energy_identity
