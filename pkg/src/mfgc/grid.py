"""Uniform periodic grids, stencils and quadrature.

Scalar fields are arrays of shape ``grid.shape`` (``(N,)`` or ``(N, N)``);
vector fields carry a trailing component axis, shape ``grid.shape + (d,)``.
Nodes are ``-a/2 + k h`` for ``k = 0..N-1`` in each direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class TorusGrid:
    """Tensor grid on the d-dimensional torus of side length ``radius``."""

    dim: int
    radius: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParameterError(f"dim must be 1 or 2, got {self.dim}")
        if not self.radius > 0:
            raise ParameterError(f"radius must be positive, got {self.radius}")
        if self.points < 3:
            raise ParameterError(f"points must be >= 3, got {self.points}")

    @property
    def spacing(self) -> float:
        return self.radius / self.points

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        ax = -0.5 * self.radius + self.spacing * np.arange(self.points)
        ax.flags.writeable = False
        return ax

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)`` (read-only)."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        c = np.stack(mesh, axis=-1)
        c.flags.writeable = False
        return c

    def norm_coords(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coords**2, axis=-1))

    # -- shape checks -----------------------------------------------------

    def check_scalar(self, u, name="field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ShapeError(f"{name} has shape {u.shape}, expected {self.shape}")
        return u

    def check_vector(self, v, name="field") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.shape + (self.dim,):
            raise ShapeError(f"{name} has shape {v.shape}, expected {self.shape + (self.dim,)}")
        return v

    # -- stencils ---------------------------------------------------------

    def gradient(self, u, scheme="central", direction=None) -> np.ndarray:
        """Periodic gradient of a scalar field.

        ``scheme="upwind"`` needs a vector ``direction`` field and takes the
        backward difference where the direction component is positive and the
        forward difference otherwise.
        """
        u = self.check_scalar(u)
        h = self.spacing
        comps = []
        if scheme == "central":
            for i in range(self.dim):
                comps.append((np.roll(u, -1, axis=i) - np.roll(u, 1, axis=i)) / (2 * h))
        elif scheme == "upwind":
            if direction is None:
                raise ShapeError("upwind gradient requires a direction field")
            direction = self.check_vector(direction, "direction")
            for i in range(self.dim):
                fwd = (np.roll(u, -1, axis=i) - u) / h
                bwd = (u - np.roll(u, 1, axis=i)) / h
                comps.append(np.where(direction[..., i] > 0, bwd, fwd))
        else:
            raise ParameterError(f"unknown gradient scheme {scheme!r}")
        return np.stack(comps, axis=-1)

    def forward_gradient(self, u) -> np.ndarray:
        u = self.check_scalar(u)
        return np.stack(
            [(np.roll(u, -1, axis=i) - u) / self.spacing for i in range(self.dim)], axis=-1
        )

    def backward_divergence(self, v) -> np.ndarray:
        v = self.check_vector(v)
        return sum(
            (v[..., i] - np.roll(v[..., i], 1, axis=i)) / self.spacing for i in range(self.dim)
        )

    def divergence(self, v) -> np.ndarray:
        """Central divergence, the negative adjoint of the central gradient."""
        v = self.check_vector(v)
        h = self.spacing
        return sum(
            (np.roll(v[..., i], -1, axis=i) - np.roll(v[..., i], 1, axis=i)) / (2 * h)
            for i in range(self.dim)
        )

    def laplacian(self, u) -> np.ndarray:
        u = self.check_scalar(u)
        h2 = self.spacing**2
        out = np.zeros_like(u)
        for i in range(self.dim):
            out += (np.roll(u, -1, axis=i) - 2 * u + np.roll(u, 1, axis=i)) / h2
        return out

    # -- quadrature -------------------------------------------------------

    def integrate(self, f, weights=None):
        """``h^d * sum_x f(x) w(x)``; returns a vector for vector fields.

        The reduction runs in a fixed order (flattened C order).
        """
        f = np.asarray(f, dtype=float)
        if f.shape[: self.dim] != self.shape:
            raise ShapeError(f"field shape {f.shape} does not match grid {self.shape}")
        flat = f.reshape((self.size,) + f.shape[self.dim :])
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != self.shape:
                raise ShapeError(f"weights have shape {weights.shape}, expected {self.shape}")
            total = weights.reshape(-1) @ flat * self.cell_volume
        else:
            total = flat.sum(axis=0) * self.cell_volume
        return float(total) if np.ndim(total) == 0 else total

    def mass(self, m) -> float:
        return self.integrate(m)

    def support(self, m) -> np.ndarray:
        """Numerical support ``{m > 1e-12 h^-d}`` as a boolean mask."""
        m = self.check_scalar(m, "density")
        return m > 1e-12 / self.cell_volume

    def boundary_mass(self, m) -> float:
        """Mass outside the centred ball of radius ``a/4``.

        Validity diagnostic for periodized-box runs standing in for R^d.
        """
        m = self.check_scalar(m, "density")
        outside = self.norm_coords() > 0.25 * self.radius
        return self.integrate(np.where(outside, m, 0.0))

    def uniform_density(self) -> np.ndarray:
        return np.full(self.shape, 1.0 / self.radius**self.dim)

    def normalize(self, m) -> np.ndarray:
        m = self.check_scalar(m, "density")
        return m / self.integrate(m)

    def second_moment(self, m) -> float:
        return self.integrate(np.sum(self.coords**2, axis=-1), m)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class DensityPath:
    """Densities ``m(t_n)`` for ``n = 0..M``, stacked on axis 0."""

    grid: TorusGrid
    time: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.time.steps + 1,) + self.grid.shape
        if self.values.shape != expected:
            raise ShapeError(f"density path has shape {self.values.shape}, expected {expected}")

    def __getitem__(self, n):
        return self.values[n]

    def masses(self) -> np.ndarray:
        return np.array([self.grid.mass(m) for m in self.values])

    def min_value(self) -> float:
        return float(self.values.min())
