from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfgc.errors import ParameterError, ShapeError
from mfgc.grid import DensityPath, TimeGrid, TorusGrid


def test_nodes_start_at_minus_half_radius():
    g = TorusGrid(1, 4.0, 8)
    assert g.spacing == 0.5
    np.testing.assert_allclose(g.axis, -2.0 + 0.5 * np.arange(8))
    assert g.coords.shape == (8, 1)


def test_coords_are_cached_and_read_only(grid2):
    assert grid2.coords is grid2.coords
    with pytest.raises(ValueError):
        grid2.coords[0, 0, 0] = 1.0


@pytest.mark.parametrize("kw", [dict(dim=3, radius=1, points=8), dict(dim=1, radius=0, points=8),
                                dict(dim=1, radius=1, points=2)])
def test_invalid_grids(kw):
    with pytest.raises(ParameterError):
        TorusGrid(**kw)


def test_shape_checks(grid1):
    with pytest.raises(ShapeError):
        grid1.check_scalar(np.zeros(5))
    with pytest.raises(ShapeError):
        grid1.check_vector(np.zeros(32))
    with pytest.raises(ShapeError):
        grid1.integrate(np.zeros(7))


def test_uniform_density_mass(grid1, grid2):
    assert grid1.mass(grid1.uniform_density()) == pytest.approx(1.0, abs=1e-14)
    assert grid2.mass(grid2.uniform_density()) == pytest.approx(1.0, abs=1e-14)


def test_integrate_vector_field(grid2):
    v = np.ones(grid2.shape + (2,))
    v[..., 1] = 2.0
    np.testing.assert_allclose(grid2.integrate(v, grid2.uniform_density()), [1.0, 2.0])


def test_central_gradient_of_a_mode_is_the_discrete_derivative():
    g = TorusGrid(1, 2 * np.pi, 64)
    x = g.coords[..., 0]
    grad = g.gradient(np.sin(x))[..., 0]
    # central differences of sin: sin(h)/h cos(x)
    np.testing.assert_allclose(grad, np.sin(g.spacing) / g.spacing * np.cos(x), atol=1e-13)


def test_laplacian_eigenvalue():
    g = TorusGrid(1, 2 * np.pi, 32)
    x = g.coords[..., 0]
    k = 3
    lam = (2 / g.spacing**2) * (1 - np.cos(k * g.spacing))
    np.testing.assert_allclose(g.laplacian(np.cos(k * x)), -lam * np.cos(k * x), atol=1e-11)


def test_upwind_gradient_picks_side():
    g = TorusGrid(1, 1.0, 10)
    u = g.coords[..., 0] ** 2
    up = g.gradient(u, "upwind", np.ones(g.shape + (1,)))
    down = g.gradient(u, "upwind", -np.ones(g.shape + (1,)))
    np.testing.assert_allclose(up[..., 0], (u - np.roll(u, 1)) / g.spacing)
    np.testing.assert_allclose(down[..., 0], (np.roll(u, -1) - u) / g.spacing)
    with pytest.raises(ShapeError):
        g.gradient(u, "upwind")


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]))
def test_divergence_is_minus_adjoint_of_gradient(seed, dim):
    g = TorusGrid(dim, 3.0, 12)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.shape)
    v = rng.normal(size=g.shape + (dim,))
    lhs = g.integrate(np.sum(g.gradient(u) * v, axis=-1))
    rhs = -g.integrate(u * g.divergence(v))
    assert lhs == pytest.approx(rhs, abs=1e-10)
    lhs = g.integrate(np.sum(g.forward_gradient(u) * v, axis=-1))
    rhs = -g.integrate(u * g.backward_divergence(v))
    assert lhs == pytest.approx(rhs, abs=1e-10)


@given(st.integers(0, 2**31 - 1))
def test_laplacian_is_symmetric_and_kills_constants(seed):
    g = TorusGrid(2, 2.0, 9)
    rng = np.random.default_rng(seed)
    u, w = rng.normal(size=(2,) + g.shape)
    assert g.integrate(u * g.laplacian(w)) == pytest.approx(g.integrate(w * g.laplacian(u)), abs=1e-9)
    np.testing.assert_allclose(g.laplacian(np.full(g.shape, 3.0)), 0.0, atol=1e-12)


def test_support_and_boundary_mass():
    g = TorusGrid(1, 4.0, 40)
    m = np.zeros(g.shape)
    m[20] = 1 / g.spacing
    assert g.support(m).sum() == 1
    assert g.boundary_mass(m) == 0.0
    m2 = np.zeros(g.shape)
    m2[0] = 1 / g.spacing
    assert g.boundary_mass(m2) == pytest.approx(1.0)


def test_second_moment_of_uniform():
    g = TorusGrid(1, 2.0, 2000)
    assert g.second_moment(g.uniform_density()) == pytest.approx(1 / 3, rel=1e-5)


def test_time_grid_and_density_path(grid1):
    tg = TimeGrid(1.0, 4)
    assert tg.dt == 0.25
    np.testing.assert_allclose(tg.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    path = DensityPath(grid1, tg, np.tile(grid1.uniform_density(), (5, 1)))
    np.testing.assert_allclose(path.masses(), 1.0)
    assert path.min_value() > 0
    with pytest.raises(ShapeError):
        DensityPath(grid1, tg, np.zeros((4, 32)))
    with pytest.raises(ParameterError):
        TimeGrid(0.0, 3)
