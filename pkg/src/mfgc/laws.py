"""Graph measures ``mu = (Id, alpha) # m`` and the statistics models read from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TorusGrid


@dataclass(frozen=True)
class LawSummary:
    """Finite statistics of a joint state-control law.

    ``kind`` names which fields a model consumes:

    * ``"none"``: nothing (mu-independent Lagrangian)
    * ``"mean_control"``: ``mean_control`` (abar = int alpha dmu)
    * ``"kernel_mean"``: ``weighted_mean`` V and ``normalizer`` Z
    * ``"phi_mean"``: ``phi_mean`` y = int phi(x) alpha dmu

    ``moments`` maps exponents (``np.inf`` allowed) to Lambda moments.
    """

    kind: str
    mean_control: np.ndarray | None = None
    weighted_mean: np.ndarray | None = None
    normalizer: float | None = None
    phi_mean: np.ndarray | None = None
    moments: dict = field(default_factory=dict)

    def lam(self, exponent) -> float:
        return self.moments[exponent]

    def vector(self) -> np.ndarray:
        """The payload a model actually reads, flattened (used for diffs)."""
        parts = [np.zeros(0)]
        for v in (self.mean_control, self.weighted_mean, self.phi_mean):
            if v is not None:
                parts.append(np.atleast_1d(np.asarray(v, dtype=float)))
        if self.normalizer is not None:
            parts.append(np.array([self.normalizer]))
        return np.concatenate(parts)


def lambda_moment(grid: TorusGrid, m, alpha, exponent) -> float:
    """``Lambda_q = ||alpha||_{L^q(m)}``; ``q = inf`` is the max over the numerical support."""
    norms = np.sqrt(np.sum(np.asarray(alpha) ** 2, axis=-1))
    if np.isinf(exponent):
        supp = grid.support(m)
        return float(norms[supp].max()) if supp.any() else 0.0
    if exponent < 1:
        raise ValueError(f"moment exponent must be >= 1, got {exponent}")
    return float(grid.integrate(norms**exponent, m) ** (1.0 / exponent))


@dataclass(frozen=True)
class ControlLaw:
    """Graph measure of ``control`` over ``density`` plus its cached summary."""

    grid: TorusGrid
    density: np.ndarray = field(repr=False)
    control: np.ndarray = field(repr=False)
    summary: LawSummary

    def moment(self, exponent) -> float:
        return lambda_moment(self.grid, self.density, self.control, exponent)

    @property
    def lambda_inf(self) -> float:
        return self.moment(np.inf)

    @property
    def mean_control(self) -> np.ndarray:
        return self.grid.integrate(self.control, self.density)
