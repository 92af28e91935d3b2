"""Finite-difference solvers for mean field games of controls on the torus."""

from __future__ import annotations

__version__ = "0.1.0"

from .coupler import OuterOptions, ProblemSpec, SolveReport, solve, uniqueness_probe
from .grid import DensityPath, TimeGrid, TorusGrid
from .legendre import HamiltonianEvaluator
from .models import (
    CrowdMotionModel,
    CrowdMotionParams,
    ExhaustibleGeneralModel,
    ExhaustibleLinearModel,
    ExhaustibleResourceParams,
    PowerLagrangian,
    SmoothedDensityCost,
    ZeroCoupling,
)

__all__ = [
    "__version__", "TorusGrid", "TimeGrid", "DensityPath", "HamiltonianEvaluator",
    "PowerLagrangian", "ExhaustibleLinearModel", "ExhaustibleGeneralModel",
    "ExhaustibleResourceParams", "CrowdMotionModel", "CrowdMotionParams",
    "SmoothedDensityCost", "ZeroCoupling", "ProblemSpec", "OuterOptions", "SolveReport",
    "solve", "uniqueness_probe",
]
