from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfgc.coupler import ProblemSpec
from mfgc.grid import TimeGrid, TorusGrid
from mfgc.models import SmoothedDensityCost, bump

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def gaussian_density(grid, width=0.3, center=0.0):
    r2 = np.sum((grid.coords - center) ** 2, axis=-1)
    return grid.normalize(np.exp(-r2 / (2 * width**2)))


def make_problem(model, points=64, radius=4.0, steps=50, horizon=1.0, nu=0.1, eta=0.2,
                 amplitude=-0.5, dim=1, **kw):
    grid = TorusGrid(dim, radius, points)
    return ProblemSpec(grid, TimeGrid(horizon, steps), nu, model, gaussian_density(grid),
                       terminal=SmoothedDensityCost(bump(amplitude, 0.4), eta, 0.3), **kw)


@pytest.fixture
def grid1():
    return TorusGrid(1, 4.0, 32)


@pytest.fixture
def grid2():
    return TorusGrid(2, 4.0, 16)
