from __future__ import annotations

import numpy as np
import pytest
from conftest import make_problem

from mfgc.coupler import (
    OuterOptions,
    ThetaEvaluator,
    energy_identity,
    forward_sweep,
    random_initialization,
    residuals,
    sample_monotonicity,
    solve,
    theta_evaluator,
    uniqueness_probe,
)
from mfgc.errors import FixedPointFailure, ParameterError
from mfgc.fixed_point import FixedPointOptions
from mfgc.laws import LawSummary
from mfgc.legendre import HamiltonianEvaluator
from mfgc.models import CrowdMotionModel, CrowdMotionParams, ExhaustibleLinearModel
from mfgc.pde import heat_flow

ONE = (1.0,)


def small(model, **kw):
    kw.setdefault("points", 32)
    kw.setdefault("steps", 20)
    return make_problem(model, **kw)


@pytest.fixture(scope="module")
def exhaustible_run():
    problem = small(ExhaustibleLinearModel(0.5))
    return problem, solve(problem, OuterOptions(schedule=ONE, record_iterates=True))


@pytest.fixture(scope="module")
def crowd_run():
    problem = small(CrowdMotionModel(CrowdMotionParams(lam=1.0)))
    return problem, solve(problem, OuterOptions(schedule=(0.5, 1.0)))


# -- theta-scaled evaluator --------------------------------------------------


def test_theta_zero_is_uncontrolled():
    ev = ThetaEvaluator(HamiltonianEvaluator(ExhaustibleLinearModel(0.5)), 0.0)
    s = LawSummary("mean_control", mean_control=np.array([0.3]))
    p = np.linspace(-2, 2, 9)[:, None]
    h, a = ev.hamiltonian(0.0, np.zeros_like(p), p, s)
    assert np.all(h == 0) and np.all(a == 0)
    assert ev.mu_independent
    assert ev.lagrangian(0.0, 0.0, np.zeros((1, 1)), s)[0] == 0.0
    assert np.isinf(ev.lagrangian(0.0, 0.0, np.ones((1, 1)), s)[0])


@pytest.mark.parametrize("theta", [0.25, 0.5, 0.9])
def test_theta_scaling_of_hamiltonian_and_summary(theta, grid1):
    base = HamiltonianEvaluator(CrowdMotionModel(CrowdMotionParams(lam=1.0)))
    ev = ThetaEvaluator(base, theta)
    m = grid1.uniform_density()
    alpha = np.full(grid1.shape + (1,), 0.6)
    s = ev.summarize(grid1, m, alpha)
    np.testing.assert_allclose(s.weighted_mean, [0.6 / theta])
    p = np.linspace(-2, 2, 7)[:, None]
    h, a = ev.hamiltonian(0.0, np.zeros_like(p), p, s)
    hb, ab = base.hamiltonian(0.0, np.zeros_like(p), p, s)
    np.testing.assert_allclose(h, theta * hb)
    np.testing.assert_allclose(a, theta * ab)
    # Fenchel-Young equality for the scaled pair
    np.testing.assert_allclose(h, -(p * a)[:, 0] - ev.lagrangian(0.0, 0.0, a, s), atol=1e-12)


def test_theta_one_returns_base():
    base = HamiltonianEvaluator(ExhaustibleLinearModel(0.5))
    assert theta_evaluator(base, 1.0) is base
    with pytest.raises(ParameterError):
        ThetaEvaluator(base, 1.5)


# -- outer solve -------------------------------------------------------------


def test_converged_state_has_small_residuals(exhaustible_run):
    problem, rep = exhaustible_run
    assert rep.converged and rep.theta == 1.0
    hjb, fpk, mu = residuals(problem, rep.u, rep.m, rep.laws)
    assert max(hjb, fpk, mu) <= 1e-7
    last = rep.history[-1]
    assert max(last["du"], last["dm"], last["dalpha"]) <= 1e-7


def test_mass_and_positivity_along_solution(exhaustible_run, crowd_run):
    for _, rep in (exhaustible_run, crowd_run):
        np.testing.assert_allclose(rep.density.masses(), 1.0, atol=1e-10)
        assert rep.density.min_value() >= -1e-12


def test_homotopy_records_every_stage(crowd_run):
    _, rep = crowd_run
    assert rep.converged
    assert sorted({r["theta"] for r in rep.history}) == [0.5, 1.0]
    assert set(rep.timings["stages"]) == {"0.5", "1.0"}


def test_theta_zero_gives_zero_value_and_heat_flow():
    problem = small(ExhaustibleLinearModel(0.5))
    rep = solve(problem, OuterOptions(schedule=(0.0,)))
    assert rep.converged
    assert np.all(rep.u == 0.0)
    np.testing.assert_allclose(rep.m, heat_flow(problem.grid, problem.time, problem.m0, problem.nu).values,
                               atol=1e-14)


def test_diagnostics_fields(exhaustible_run):
    _, rep = exhaustible_run
    d = rep.diagnostics
    assert d["mass_error"] <= 1e-10
    assert d["apriori_ok"]
    assert d["monotonicity_gap_min"] >= -1e-12
    assert d["u_sup"] <= d["maximum_principle_bound"] + 1e-12
    for key in ("boundary_mass", "grad_u_sup", "lambda_inf_max", "coupling_gap_g"):
        assert np.isfinite(d[key])


def test_fictitious_play_error_decays_like_one_over_j(exhaustible_run):
    problem, ref = exhaustible_run
    errs = []
    for its in (10, 40):
        rep = solve(problem, OuterOptions(schedule=ONE, strategy="fictitious_play", max_iter=its))
        assert {r["strategy"] for r in rep.history} == {"fictitious_play"}
        errs.append(np.abs(rep.u - ref.u).max())
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-3


def test_stalled_picard_falls_back():
    problem = small(ExhaustibleLinearModel(0.5))
    rep = solve(problem, OuterOptions(schedule=ONE, stall_ratio=0.0, stall_window=2, max_iter=10))
    assert rep.events[0] == {"theta": 1.0, "iteration": 2, "event": "fallback_fictitious_play"}
    strategies = [r["strategy"] for r in rep.history]
    assert strategies[:3] == ["picard"] * 3
    assert set(strategies[3:]) == {"fictitious_play"}


def test_non_convergence_is_reported_not_raised():
    problem = small(ExhaustibleLinearModel(0.5))
    rep = solve(problem, OuterOptions(schedule=(0.5, 1.0), max_iter=2))
    assert not rep.converged
    assert rep.theta == 0.5
    assert rep.events[-1] == {"theta": 0.5, "event": "not_converged"}
    assert len(rep.history) == 2


def test_inner_failure_carries_location():
    problem = small(CrowdMotionModel(CrowdMotionParams(lam=1.0)))
    opts = OuterOptions(schedule=ONE, inner=FixedPointOptions(max_iter=2))
    with pytest.raises(FixedPointFailure) as info:
        solve(problem, opts, initial_u=random_initialization(problem, 0))
    err = info.value
    assert err.theta == 1.0 and err.outer_iteration == 0 and err.time_index == 0
    assert "theta=1.0" in str(err)


def test_mu_independent_model_solves():
    problem = small(ExhaustibleLinearModel(0.0))
    rep = solve(problem, OuterOptions(schedule=ONE))
    assert rep.converged
    # abar is not fed back, so every control is (1 - u_x) / 2
    p = problem.grid.gradient(rep.u[3])
    np.testing.assert_allclose(rep.laws[3].control, (1 - p) / 2, atol=1e-12)


def test_outer_options_validation():
    for bad in ({"strategy": "newton"}, {"damping": 0.0}, {"tol": -1.0}, {"schedule": ()},
                {"schedule": (1.0, 0.5)}, {"schedule": (0.0, 1.5)}):
        with pytest.raises(ParameterError):
            OuterOptions(**bad)


def test_initial_guess_is_respected():
    problem = small(ExhaustibleLinearModel(0.5))
    init = random_initialization(problem, 3)
    opts = OuterOptions(schedule=ONE, max_iter=1)
    rep = solve(problem, opts, initial_u=init)
    # with one iteration the reported laws come from the sweep against the guess
    m, laws = forward_sweep(problem, init, problem.base_evaluator(), opts)
    np.testing.assert_array_equal(rep.m, m)
    np.testing.assert_array_equal(rep.laws[5].control, laws[5].control)
    assert not rep.converged


# -- probe and energy identity ------------------------------------------------


def test_random_initialization_is_seeded():
    problem = small(ExhaustibleLinearModel(0.5))
    a, b = random_initialization(problem, 4), random_initialization(problem, 4)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - random_initialization(problem, 5)).max() > 0


def test_probe_on_monotone_model():
    problem = small(ExhaustibleLinearModel(0.5))
    starts = [None, random_initialization(problem, 1), random_initialization(problem, 2)]
    probe = uniqueness_probe(problem, OuterOptions(schedule=ONE), starts)
    assert probe.monotone_regime
    assert not probe.inconclusive
    assert len(probe.distances) == 3
    assert probe.max_distance <= 1e-6
    assert probe.unique
    assert probe.to_dict()["unique_within_tolerance"]


def test_probe_marks_unconverged_runs_inconclusive():
    problem = small(ExhaustibleLinearModel(0.5))
    probe = uniqueness_probe(problem, OuterOptions(schedule=ONE, max_iter=2),
                             [None, random_initialization(problem, 1)])
    assert probe.inconclusive and not probe.unique


def test_sampled_gaps_sign():
    assert min(sample_monotonicity(small(ExhaustibleLinearModel(0.5)))) >= -1e-12
    anti = small(ExhaustibleLinearModel(0.5), eta=-1.0)
    assert sample_monotonicity(anti)[1] < 0


def test_energy_identity_nonnegative_on_iterates(exhaustible_run):
    problem, rep = exhaustible_run
    its = rep.iterates
    values = [energy_identity(problem, its[i], its[j]) for i in range(0, 6) for j in range(i + 1, 7)]
    assert min(values) >= -1e-8
    assert energy_identity(problem, its[0], its[0]) == 0.0


def test_energy_identity_positive_for_distinct_states():
    problem = small(CrowdMotionModel(CrowdMotionParams(lam=1.0)))
    ev = problem.base_evaluator()
    opts = OuterOptions()
    states = []
    for seed in (1, 2):
        u = random_initialization(problem, seed)
        m, laws = forward_sweep(problem, u, ev, opts)
        states.append(type("S", (), {"u": u, "m": m, "laws": laws})())
    assert energy_identity(problem, *states) > 0
