"""Lagrangians, couplings and the assumption audits.

Every model reads the joint law only through a :class:`~mfgc.laws.LawSummary`.
Evaluators are vectorized: ``x`` and ``alpha`` carry a trailing axis of
length ``dim`` and arbitrary leading axes; the result has the leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .grid import TorusGrid
from .laws import ControlLaw, LawSummary, lambda_moment


def _norm(v):
    return np.sqrt(np.sum(v**2, axis=-1))


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def conjugate_exponent(r: float) -> float:
    return r / (r - 1.0)


class LagrangianModel:
    """Base class for running costs ``L(t, x, alpha, mu)``.

    Subclasses set ``dim``, ``q_prime``, ``c0`` and ``summary_kind`` and
    implement :meth:`lagrangian`, :meth:`grad_alpha` and :meth:`hess_alpha`.
    Models with an explicit conjugate override :meth:`closed_form`.
    """

    dim = 1
    q_prime = 2.0
    c0 = 1.0
    summary_kind = "none"
    mu_independent = True

    @property
    def q(self) -> float:
        return conjugate_exponent(self.q_prime)

    # -- law statistics ---------------------------------------------------

    def summarize(self, grid: TorusGrid, m, alpha) -> LawSummary:
        """Payload statistics only; see :func:`law_summary` for the moments too."""
        return LawSummary(kind=self.summary_kind, **self._payload(grid, m, alpha))

    def _payload(self, grid, m, alpha) -> dict:
        return {}

    def zero_summary(self, grid: TorusGrid) -> LawSummary:
        return self.summarize(grid, grid.uniform_density(), np.zeros(grid.shape + (grid.dim,)))

    # -- evaluators -------------------------------------------------------

    def lagrangian(self, t, x, alpha, s):
        raise NotImplementedError

    def grad_alpha(self, t, x, alpha, s):
        raise NotImplementedError

    def lagrangian_difference(self, t, x, alpha, s1, s2):
        """``L(t, x, alpha, s1) - L(t, x, alpha, s2)``; models override it with a
        cancellation-free form."""
        return self.lagrangian(t, x, alpha, s1) - self.lagrangian(t, x, alpha, s2)

    def hess_alpha(self, t, x, alpha, s):
        raise NotImplementedError

    def grad_x(self, t, x, alpha, s):
        return np.zeros(np.shape(alpha))

    @property
    def has_closed_form(self) -> bool:
        return False

    def closed_form(self, t, x, p, s):
        """Return ``(H, alpha_star)`` in closed form."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form Hamiltonian")

    def describe(self) -> dict:
        return {"model": type(self).__name__, "q_prime": self.q_prime, "c0": self.c0}


class PowerLagrangian(LagrangianModel):
    """``L = kappa |alpha|^q'/q' - alpha . pbar + potential(x)``, independent of mu.

    With ``kappa = 1`` its conjugate is ``|p - pbar|^q / q``; ``q' = 2`` gives
    the pure quadratic case. ``potential`` and ``potential_grad`` are optional
    callables of the coordinates.
    """

    def __init__(self, dim=1, q_prime=2.0, kappa=1.0, pbar=None, potential=None,
                 potential_grad=None, c0=None):
        if q_prime <= 1:
            raise ParameterError("q_prime must be > 1")
        if kappa <= 0:
            raise ParameterError("kappa must be positive")
        self.dim = dim
        self.q_prime = float(q_prime)
        self.kappa = float(kappa)
        self.pbar = np.zeros(dim) if pbar is None else np.broadcast_to(np.asarray(pbar, float), (dim,))
        self.potential = potential
        self.potential_grad = potential_grad
        self.c0 = float(c0) if c0 is not None else self._default_c0()

    def _default_c0(self):
        # Young on alpha.pbar plus the pure-power constants
        b = float(np.max(np.abs(self.pbar))) * np.sqrt(self.dim)
        base = max(2.0 * self.q_prime / self.kappa, self.kappa, 2.0)
        return base * (1.0 + b) ** max(self.q, self.q_prime)

    def lagrangian(self, t, x, alpha, s):
        val = self.kappa * _norm(alpha) ** self.q_prime / self.q_prime - _dot(alpha, self.pbar)
        if self.potential is not None:
            val = val + self.potential(x)
        return val

    def grad_alpha(self, t, x, alpha, s):
        r = _norm(alpha)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r > 0, r ** (self.q_prime - 2), 0.0)
        return self.kappa * radial * alpha - self.pbar

    def hess_alpha(self, t, x, alpha, s):
        return _power_hessian(alpha, self.q_prime, self.kappa)

    def grad_x(self, t, x, alpha, s):
        if self.potential_grad is None:
            return np.zeros(np.shape(alpha))
        return np.broadcast_to(self.potential_grad(x), np.shape(alpha)).copy()

    @property
    def has_closed_form(self):
        return True

    def closed_form(self, t, x, p, s):
        w = np.asarray(p, float) - self.pbar
        r = _norm(w)
        q = self.q
        h = self.kappa ** (1.0 - q) * r**q / q
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r > 0, r ** (q - 2), 0.0)
        astar = -(self.kappa ** (1.0 - q)) * radial[..., None] * w
        if self.potential is not None:
            h = h - self.potential(x)
        return h, astar


def _power_hessian(alpha, r_exp, kappa):
    """Hessian of ``kappa |a|^r / r``; infinite at ``a = 0`` when ``r < 2``."""
    d = alpha.shape[-1]
    r = _norm(alpha)
    eye = np.eye(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        if r_exp == 2.0:
            return kappa * np.broadcast_to(eye, alpha.shape + (d,)).copy()
        rad = r ** (r_exp - 2)
        unit = np.where(r[..., None] > 0, alpha / r[..., None], 0.0)
        outer = unit[..., :, None] * unit[..., None, :]
        hess = kappa * rad[..., None, None] * (eye + (r_exp - 2) * outer)
    zero = r == 0
    if np.any(zero):
        hess[zero] = np.inf if r_exp < 2 else 0.0
    return hess


# ---------------------------------------------------------------------------
# exhaustible resources


@dataclass(frozen=True)
class ExhaustibleResourceParams:
    """Parameters of the Bertrand-Cournot exhaustible resource model.

    ``form="linear"`` is the one-dimensional linear demand system.
    ``form="general"`` uses ``L0 = kappa |alpha|^q'/q' - beta . alpha`` and the
    price map ``P = strength * Psi(y)``, ``Psi(y) = y + psi_c |y|^(q'-2) y``,
    ``y = int phi(x) alpha dmu``, with ``phi`` a callable returning
    ``(..., d, d)`` matrices (identity when ``None``).
    """

    epsilon: float = 0.5
    form: str = "linear"
    dim: int = 1
    q_prime: float = 2.0
    kappa: float = 2.0
    beta: float = 0.0
    strength: float = 1.0
    psi_c: float = 0.0
    phi: object = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ParameterError("epsilon >= 0 required")
        if self.form not in ("linear", "general"):
            raise ParameterError(f"unknown demand form {self.form!r}")
        if self.form == "linear" and self.dim != 1:
            raise ParameterError("the linear demand form is one-dimensional")
        if self.strength < 0 or self.psi_c < 0:
            raise ParameterError("strength >= 0 and psi_c >= 0 required (monotone Psi)")
        if self.psi_c > 0 and self.q_prime < 2:
            # |y|^(q'-2) y is not Lipschitz at y = 0 when q' < 2
            raise ParameterError("psi_c > 0 requires q_prime >= 2 (locally Lipschitz Psi)")


class ExhaustibleLinearModel(LagrangianModel):
    """``L = alpha^2 + eps/(1+eps) alpha abar - alpha/(1+eps)`` in one dimension.

    Declared ``q' = 2`` and ``C0 = 4``: with ``c = eps/(1+eps)`` and
    ``b = 1/(1+eps)``, both at most one, ``L >= alpha^2/2 - c^2 abar^2 - b^2``
    and ``p H_p - H = (p^2 - (c abar - b)^2)/4``.
    """

    dim = 1
    q_prime = 2.0
    c0 = 4.0
    summary_kind = "mean_control"
    mu_independent = False

    def __init__(self, epsilon=0.5):
        self.params = ExhaustibleResourceParams(epsilon=epsilon)
        self.epsilon = float(epsilon)
        self.coupling = self.epsilon / (1.0 + self.epsilon)
        self.offset = 1.0 / (1.0 + self.epsilon)
        self.mu_independent = self.epsilon == 0

    def _payload(self, grid, m, alpha):
        return {"mean_control": grid.integrate(alpha, m)}

    def lagrangian(self, t, x, alpha, s):
        a = alpha[..., 0]
        return a**2 + self.coupling * a * s.mean_control[0] - self.offset * a

    def grad_alpha(self, t, x, alpha, s):
        return 2.0 * alpha + self.coupling * s.mean_control - self.offset

    def lagrangian_difference(self, t, x, alpha, s1, s2):
        return self.coupling * alpha[..., 0] * (s1.mean_control[0] - s2.mean_control[0])

    def hess_alpha(self, t, x, alpha, s):
        return np.full(alpha.shape + (1,), 2.0)

    @property
    def has_closed_form(self):
        return True

    def closed_form(self, t, x, p, s):
        w = np.asarray(p, float) + self.coupling * s.mean_control - self.offset
        return 0.25 * w[..., 0] ** 2, -0.5 * w

    def describe(self):
        return {**super().describe(), "epsilon": self.epsilon}


class ExhaustibleGeneralModel(LagrangianModel):
    """``l = kappa |alpha|^q'/q' - beta . alpha + (phi(x) alpha) . P(mu)``.

    ``P(mu) = strength * Psi(int phi alpha dmu)`` with the monotone map
    ``Psi(y) = y + psi_c |y|^(q'-2) y``; the conjugate is explicit,
    ``H = kappa^(1-q) |w|^q / q`` with ``w = p + phi^T P - beta``.
    """

    summary_kind = "phi_mean"
    mu_independent = False

    def __init__(self, params: ExhaustibleResourceParams):
        if params.form != "general":
            params = ExhaustibleResourceParams(**{**params.__dict__, "form": "general"})
        self.params = params
        self.dim = params.dim
        self.q_prime = float(params.q_prime)
        self.kappa = float(params.kappa)
        self.beta = np.broadcast_to(np.asarray(params.beta, float), (self.dim,))
        self.strength = params.strength * params.epsilon / (1.0 + params.epsilon)
        self.mu_independent = self.strength == 0
        base = max(2.0 * self.q_prime / self.kappa, self.kappa, 4.0)
        self.c0 = base * (1.0 + np.abs(self.beta).max() + self.strength * (1 + params.psi_c)) ** 2

    def phi(self, x):
        if self.params.phi is None:
            return np.broadcast_to(np.eye(self.dim), np.shape(x)[:-1] + (self.dim, self.dim))
        return self.params.phi(x)

    def _payload(self, grid, m, alpha):
        phia = np.einsum("...ij,...j->...i", self.phi(grid.coords), alpha)
        return {"phi_mean": grid.integrate(phia, m)}

    def price(self, s) -> np.ndarray:
        y = s.phi_mean
        r = _norm(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = np.where(r > 0, r ** (self.q_prime - 2), 0.0)
        return self.strength * (y + self.params.psi_c * rad * y)

    def _shift(self, x, s):
        # phi(x)^T P
        return np.einsum("...ji,j->...i", self.phi(x), self.price(s))

    def lagrangian(self, t, x, alpha, s):
        return (
            self.kappa * _norm(alpha) ** self.q_prime / self.q_prime
            - _dot(alpha, self.beta)
            + _dot(alpha, self._shift(x, s))
        )

    def grad_alpha(self, t, x, alpha, s):
        r = _norm(alpha)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = np.where(r > 0, r ** (self.q_prime - 2), 0.0)
        return self.kappa * rad * alpha - self.beta + self._shift(x, s)

    def hess_alpha(self, t, x, alpha, s):
        return _power_hessian(alpha, self.q_prime, self.kappa)

    def grad_x(self, t, x, alpha, s):
        if self.params.phi is None:
            return np.zeros(np.shape(alpha))
        eps = 1e-6
        out = np.zeros(np.shape(alpha))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = eps
            out[..., i] = (self.lagrangian(t, x + e, alpha, s) - self.lagrangian(t, x - e, alpha, s)) / (2 * eps)
        return out

    @property
    def has_closed_form(self):
        return True

    def closed_form(self, t, x, p, s):
        w = np.asarray(p, float) + self._shift(x, s) - self.beta
        r = _norm(w)
        q = self.q
        h = self.kappa ** (1.0 - q) * r**q / q
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = np.where(r > 0, r ** (q - 2), 0.0)
        return h, -(self.kappa ** (1.0 - q)) * rad[..., None] * w

    def describe(self):
        return {**super().describe(), "epsilon": self.params.epsilon, "psi_c": self.params.psi_c}


# ---------------------------------------------------------------------------
# crowd motion


@dataclass(frozen=True)
class CrowdMotionParams:
    """Mainstream-aversion crowd model.

    ``kernel`` is a callable of the coordinates returning ``k(x) >= 0``
    (``None`` means ``k = 1``); ``q1`` may be ``inf``.
    """

    lam: float = 0.0
    theta_mix: float = 1.0
    a_prime: float = 2.0
    kernel: object = None
    q1: float = 2.0
    dim: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lambda >= 0 required")
        if not 0 <= self.theta_mix <= 1:
            raise ParameterError("theta_mix must lie in [0, 1]")
        if self.a_prime <= 1:
            raise ParameterError("a_prime > 1 required")


class CrowdMotionModel(LagrangianModel):
    """``L = theta/2 |alpha + lam V(mu)|^2 + (1-theta)/a' |alpha|^a'``.

    ``V = Z^-1 int alpha k(x) dmu`` with ``Z = (int k^q1 dm)^(1/q1)``.
    The declared exponent is 2 when ``theta = 1``, ``a'`` when ``theta = 0``
    and ``max(2, a')`` otherwise.
    """

    summary_kind = "kernel_mean"

    def __init__(self, params: CrowdMotionParams):
        self.params = params
        self.dim = params.dim
        th, ap = params.theta_mix, params.a_prime
        if th == 1:
            self.q_prime = 2.0
        elif th == 0:
            self.q_prime = float(ap)
        else:
            self.q_prime = max(2.0, float(ap))
        if params.q1 < self.q:
            raise ParameterError(f"q1 = {params.q1} must be >= q = {self.q:g}")
        self.mu_independent = params.lam == 0 or th == 0
        self.c0 = self._declared_c0()

    def _declared_c0(self):
        th, lam, ap = self.params.theta_mix, self.params.lam, self.params.a_prime
        cands = [2.0, 1.0 + th * lam**2, th + (1 - th) / ap + th * lam**2]
        if th > 0:
            cands.append(4.0 / th)
        if th < 1:
            cands.append(2.0 * ap / (1 - th))
        cands.append(2.0 * (1.0 + th * lam) ** 2)
        return float(max(cands))

    def kernel(self, x):
        if self.params.kernel is None:
            return np.ones(np.shape(x)[:-1])
        return np.asarray(self.params.kernel(x), float)

    def _payload(self, grid, m, alpha):
        k = self.kernel(grid.coords)
        if np.any(k < 0):
            raise ParameterError("kernel must be nonnegative")
        q1 = self.params.q1
        if np.isinf(q1):
            supp = grid.support(m)
            z = float(k[supp].max()) if supp.any() else 0.0
        else:
            z = float(grid.integrate(k**q1, m) ** (1.0 / q1))
        if z == 0:
            v = np.zeros(grid.dim)
        else:
            v = grid.integrate(alpha * k[..., None], m) / z
        return {"weighted_mean": v, "normalizer": z}

    def lagrangian(self, t, x, alpha, s):
        th, lam, ap = self.params.theta_mix, self.params.lam, self.params.a_prime
        shifted = alpha + lam * s.weighted_mean
        return 0.5 * th * _dot(shifted, shifted) + (1 - th) / ap * _norm(alpha) ** ap

    def lagrangian_difference(self, t, x, alpha, s1, s2):
        th, lam = self.params.theta_mix, self.params.lam
        v1, v2 = s1.weighted_mean, s2.weighted_mean
        return th * lam * _dot(alpha, v1 - v2) + 0.5 * th * lam**2 * (_dot(v1, v1) - _dot(v2, v2))

    def grad_alpha(self, t, x, alpha, s):
        th, lam, ap = self.params.theta_mix, self.params.lam, self.params.a_prime
        r = _norm(alpha)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = np.where(r > 0, r ** (ap - 2), 0.0)
        return th * (alpha + lam * s.weighted_mean) + (1 - th) * rad * alpha

    def hess_alpha(self, t, x, alpha, s):
        th, ap = self.params.theta_mix, self.params.a_prime
        d = alpha.shape[-1]
        hess = th * np.broadcast_to(np.eye(d), alpha.shape + (d,))
        if th < 1:
            hess = hess + _power_hessian(alpha, ap, 1 - th)
        return np.array(hess)

    @property
    def has_closed_form(self):
        return self.params.a_prime == 2 or self.params.theta_mix in (0.0, 1.0)

    def closed_form(self, t, x, p, s):
        th, lam, ap = self.params.theta_mix, self.params.lam, self.params.a_prime
        p = np.asarray(p, float)
        v = s.weighted_mean
        if ap == 2 or th == 1:
            # stationarity: th (alpha + lam V) + (1 - th) alpha + p = 0
            astar = -(p + th * lam * v)
            h = 0.5 * _dot(p, p) + th * lam * _dot(p, v) - 0.5 * th * (1 - th) * lam**2 * _dot(v, v)
            return h, astar
        # th == 0: pure power a'
        qa = conjugate_exponent(ap)
        r = _norm(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = np.where(r > 0, r ** (qa - 2), 0.0)
        return r**qa / qa, -rad[..., None] * p

    def describe(self):
        p = self.params
        return {**super().describe(), "lambda": p.lam, "theta_mix": p.theta_mix,
                "a_prime": p.a_prime, "q1": p.q1}


# ---------------------------------------------------------------------------
# couplings f and terminal costs g


class ZeroCoupling:
    """``f = 0``."""

    def __call__(self, grid, m, t=0.0):
        return np.zeros(grid.shape)

    def describe(self):
        return {"kind": "zero"}


class SmoothedDensityCost:
    """``g0(x) + eta * (S m)(x)`` with ``S`` a Gaussian Fourier multiplier.

    ``S`` has symbol ``exp(-sigma^2 |omega|^2 / 2) > 0``, so it is symmetric
    positive semidefinite and the cost is monotone for ``eta >= 0``.
    ``g0`` is a callable of the coordinates (or ``None`` for zero).
    """

    def __init__(self, g0=None, eta=0.0, sigma=0.5):
        self.g0 = g0
        self.eta = float(eta)
        self.sigma = float(sigma)

    def base(self, grid):
        if self.g0 is None:
            return np.zeros(grid.shape)
        return np.asarray(self.g0(grid.coords), float)

    def smooth(self, grid, m):
        m = grid.check_scalar(m, "density")
        freqs = [2 * np.pi * np.fft.fftfreq(grid.points, d=grid.spacing)] * grid.dim
        mesh = np.meshgrid(*freqs, indexing="ij")
        symbol = np.exp(-0.5 * self.sigma**2 * sum(w**2 for w in mesh))
        return np.real(np.fft.ifftn(np.fft.fftn(m) * symbol))

    def __call__(self, grid, m, t=0.0):
        out = self.base(grid)
        if self.eta != 0:
            out = out + self.eta * self.smooth(grid, m)
        return out

    def describe(self):
        return {"kind": "smoothed_density", "eta": self.eta, "sigma": self.sigma}


def bump(amplitude=1.0, width=0.5, center=0.0):
    """Gaussian bump ``amplitude * exp(-|x - c|^2 / (2 width^2))`` as a callable."""

    def g0(x):
        return amplitude * np.exp(-np.sum((x - center) ** 2, axis=-1) / (2 * width**2))

    return g0


def torus_cosine(amplitude=1.0, radius=1.0, mode=1):
    """``amplitude * sum_i cos(2 pi mode x_i / radius)``, periodic on the torus."""

    def g0(x):
        return amplitude * np.sum(np.cos(2 * np.pi * mode * x / radius), axis=-1)

    return g0


# ---------------------------------------------------------------------------
# monotonicity and growth audits


def law_summary(grid: TorusGrid, law_or_m, model: LagrangianModel, alpha=None) -> LawSummary:
    """Full summary: the model payload plus the moments ``Lambda_q`` for
    ``q`` in ``{1, 2, q', inf}``."""
    if isinstance(law_or_m, ControlLaw):
        m, alpha = law_or_m.density, law_or_m.control
    else:
        m = law_or_m
    s = model.summarize(grid, m, alpha)
    exps = sorted({1.0, 2.0, float(model.q_prime)}) + [np.inf]
    moments = {e: lambda_moment(grid, m, alpha, e) for e in exps}
    return replace(s, moments=moments)


def monotonicity_gap(model: LagrangianModel, t, law1: ControlLaw, law2: ControlLaw) -> float:
    """``int (L(., mu1) - L(., mu2)) d(mu1 - mu2)`` by quadrature over both graphs."""
    grid = law1.grid
    if law2.grid != grid:
        raise ParameterError("laws live on different grids")
    x = grid.coords
    s1, s2 = law1.summary, law2.summary
    diff = getattr(model, "lagrangian_difference", None)
    if diff is None:
        diff = lambda t, x, a, u, v: model.lagrangian(t, x, a, u) - model.lagrangian(t, x, a, v)
    on1 = diff(t, x, law1.control, s1, s2)
    on2 = diff(t, x, law2.control, s1, s2)
    return grid.integrate(on1, law1.density) - grid.integrate(on2, law2.density)


def coupling_monotonicity_gap(coupling, grid: TorusGrid, m1, m2, t=0.0) -> float:
    diff = coupling(grid, m1, t) - coupling(grid, m2, t)
    return grid.integrate(diff * (np.asarray(m1) - np.asarray(m2)))


def audit_laws(model: LagrangianModel, grid: TorusGrid, scales=(0.0, 0.5, 2.0, 10.0)):
    """Synthetic graph measures used by the audits: uniform and bump densities
    carrying constant and oscillating controls at several amplitudes."""
    x = grid.coords
    densities = [grid.uniform_density(), grid.normalize(np.exp(-np.sum(x**2, axis=-1) / (0.02 * grid.radius**2)) + 1e-3)]
    shapes = [np.ones(grid.shape + (grid.dim,)),
              np.cos(2 * np.pi * x / grid.radius) + 0.3]
    laws = []
    for m in densities:
        for s in scales:
            for sh in shapes:
                a = s * sh
                laws.append(ControlLaw(grid, m, a, model.summarize(grid, m, a)))
    return laws


@dataclass
class AuditReport:
    margins: dict
    worst: dict

    @property
    def passed(self) -> bool:
        return all(v >= -1e-9 for v in self.margins.values())

    def failures(self):
        return sorted(k for k, v in self.margins.items() if v < -1e-9)

    def to_dict(self):
        return {"passed": self.passed, "margins": self.margins, "worst": self.worst,
                "failures": self.failures()}


def _radial_samples(dim, radii):
    dirs = [np.array([1.0]), np.array([-1.0])] if dim == 1 else [
        np.array([np.cos(th), np.sin(th)]) for th in np.linspace(0, 2 * np.pi, 8, endpoint=False)
    ]
    return np.array([r * d for r in radii for d in dirs])


AUDIT_RADII = (0.0, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0, 1000.0)


def growth_audit(model: LagrangianModel, grid: TorusGrid | None = None, evaluator=None,
                 radii=AUDIT_RADII, t=0.0) -> AuditReport:
    """Sample coercivity/bound assumptions on L and the induced growth of H.

    Sampling lattice: controls and momenta on rays ``r * e`` with ``r`` in
    ``radii`` and ``e`` the two signs (1D) or 8 directions (2D), at the node
    nearest the origin and at ``x = -a/2``, against every law of
    :func:`audit_laws`. Margins are ``rhs - lhs``; negative means violated.
    """
    from .legendre import HamiltonianEvaluator

    grid = grid or TorusGrid(model.dim, 2.0, 16)
    ev = evaluator or HamiltonianEvaluator(model)
    C, qp, q = model.c0, model.q_prime, model.q
    samples = _radial_samples(grid.dim, radii)
    xs = np.stack([grid.coords[(grid.points // 2,) * grid.dim], grid.coords[(0,) * grid.dim]])
    names = ("A4_coercivity", "A5_bound", "A5_bound_x", "H_p_bound", "H_bound", "H_coercivity", "H_x_bound")
    margins = {k: np.inf for k in names}
    worst = {k: None for k in names}

    def record(name, margin, where):
        i = int(np.argmin(margin))
        if margin.flat[i] < margins[name]:
            margins[name] = float(margin.flat[i])
            worst[name] = where(i)

    for law in audit_laws(model, grid):
        s = law.summary
        lam = law.moment(qp)
        for x0 in xs:
            xx = np.broadcast_to(x0, samples.shape)
            a = samples
            L = model.lagrangian(t, xx, a, s)
            ra = _norm(a)
            info = lambda i, arr=a: {"value": arr[i].tolist(), "Lambda": lam, "x": x0.tolist()}
            record("A4_coercivity", L - (ra**qp / C - C * (1 + lam**qp)), info)
            record("A5_bound", C * (1 + ra**qp + lam**qp) - np.abs(L), info)
            Lx = _norm(model.grad_x(t, xx, a, s))
            record("A5_bound_x", C * (1 + ra**qp + lam**qp) - Lx, info)
            p = samples
            H, astar = ev.hamiltonian(t, xx, p, s)
            Hp = -astar
            Hx = ev.grad_x(t, xx, p, s)
            rp = _norm(p)
            info_p = lambda i, arr=p: {"value": arr[i].tolist(), "Lambda": lam, "x": x0.tolist()}
            record("H_p_bound", C * (1 + rp ** (q - 1) + lam) - _norm(Hp), info_p)
            record("H_bound", C * (1 + rp**q + lam**qp) - np.abs(H), info_p)
            record("H_coercivity", _dot(p, Hp) - H - (rp**q / C - C * (1 + lam**qp)), info_p)
            record("H_x_bound", C * (1 + rp**q + lam**qp) - _norm(Hx), info_p)
    return AuditReport(margins=margins, worst=worst)


def convexity_margin(model: LagrangianModel, grid: TorusGrid, rng=None, samples=200, t=0.0) -> float:
    """Smallest ``(L(a1)+L(a2))/2 - L(mid)`` divided by ``|a1-a2|^2`` over random pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = np.inf
    for law in audit_laws(model, grid, scales=(0.0, 1.0)):
        x = np.broadcast_to(grid.coords[(0,) * grid.dim], (samples, grid.dim))
        a1 = rng.uniform(-3, 3, size=(samples, grid.dim))
        a2 = rng.uniform(-3, 3, size=(samples, grid.dim))
        mid = 0.5 * (a1 + a2)
        gap = 0.5 * (model.lagrangian(t, x, a1, law.summary) + model.lagrangian(t, x, a2, law.summary)) \
            - model.lagrangian(t, x, mid, law.summary)
        worst = min(worst, float(np.min(gap / np.sum((a1 - a2) ** 2, axis=-1))))
    return worst
