from __future__ import annotations

import numpy as np
import pytest
from conftest import make_problem
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from mfgc.coupler import OuterOptions, solve
from mfgc.drift import (
    DriftTransformedEvaluator,
    IdentityDrift,
    LinearDrift,
    SaturatingDrift,
    TransformedLagrangian,
    drift_audit,
    equivalence_check,
    make_drift,
    push_control_law,
    recover_control_law,
    round_trip_errors,
    transformed_hamiltonian,
)
from mfgc.errors import ParameterError
from mfgc.laws import ControlLaw, LawSummary
from mfgc.legendre import HamiltonianEvaluator
from mfgc.models import CrowdMotionModel, CrowdMotionParams, ExhaustibleLinearModel, PowerLagrangian

NONE = LawSummary("none")
finite = st.floats(-50, 50)


# -- drift maps --------------------------------------------------------------


@given(st.lists(finite, min_size=1, max_size=20), st.sampled_from([0.0, 0.3, 0.5, 0.9, 1.0]))
def test_saturating_round_trip(vals, s):
    drift = SaturatingDrift(s)
    a = np.array(vals)[:, None]
    fwd, back = round_trip_errors(drift, a)
    assert fwd <= 1e-10 * (1 + np.abs(a).max())
    assert back <= 1e-8 * (1 + np.abs(a).max())


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=10), st.floats(0.05, 0.95))
def test_saturating_round_trip_2d(vals, s):
    a = np.array(vals)
    fwd, back = round_trip_errors(SaturatingDrift(s, dim=2), a)
    assert max(fwd, back) <= 1e-8 * (1 + np.abs(a).max())


@given(st.lists(finite, min_size=2, max_size=2), st.lists(st.floats(0.1, 5.0), min_size=2, max_size=2))
def test_linear_round_trip(vals, coeffs):
    drift = LinearDrift(coeffs)
    a = np.array([vals])
    np.testing.assert_allclose(drift.inverse(0, 0, drift.apply(0, 0, a)), a, rtol=1e-14, atol=1e-14)


def test_unit_exponent_inverse_and_range():
    drift = SaturatingDrift(1.0)
    rho = np.array([0.0, 0.5, 0.9, 0.999])
    np.testing.assert_allclose(drift.radial_inverse(rho), rho / np.sqrt(1 - rho**2), rtol=1e-14)
    assert np.isinf(drift.radial_inverse(np.array([1.0]))[0])
    np.testing.assert_array_equal(drift.in_range(np.array([[0.5], [1.0], [-2.0]])), [True, False, False])


@pytest.mark.parametrize("drift", [SaturatingDrift(0.5, 2), LinearDrift([2.0, -0.5]), IdentityDrift(2)])
def test_jacobian_matches_finite_differences(drift):
    a = np.random.default_rng(0).normal(size=(6, 2)) * 2
    jac = drift.jacobian(0, 0, a)
    eps = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        fd = (drift.apply(0, 0, a + e) - drift.apply(0, 0, a - e)) / (2 * eps)
        np.testing.assert_allclose(jac[..., :, j], fd, atol=1e-8)


def test_make_drift_names_and_rejections():
    assert isinstance(make_drift("identity"), IdentityDrift)
    assert isinstance(make_drift("linear", 2, coeffs=[2.0]), LinearDrift)
    assert make_drift("linear", 2, coeffs=[2.0]).coeffs.tolist() == [2.0, 2.0]
    assert isinstance(make_drift("saturating", exponent=0.3), SaturatingDrift)
    with pytest.raises(ParameterError, match="not differentiable"):
        make_drift("cubic")
    with pytest.raises(ParameterError):
        make_drift("sigmoid")
    with pytest.raises(ParameterError):
        LinearDrift([1.0, 0.0])
    with pytest.raises(ParameterError):
        SaturatingDrift(1.5)


@pytest.mark.parametrize("drift", [IdentityDrift(), LinearDrift(2.0), LinearDrift(-0.25),
                                   SaturatingDrift(0.0), SaturatingDrift(0.5), SaturatingDrift(1.0)])
def test_drift_audit_passes_for_shipped_drifts(drift):
    report = drift_audit(drift)
    assert report["passed"], report


def test_drift_audit_catches_wrong_constant():
    drift = LinearDrift(5.0)
    drift.c0 = 1.0
    report = drift_audit(drift)
    assert not report["passed"]
    assert report["margins"]["B2_drift"] < 0


# -- transformed Hamiltonian ---------------------------------------------------


def test_linear_drift_doubles_momentum():
    model = CrowdMotionModel(CrowdMotionParams(lam=1.0))
    s = LawSummary("kernel_mean", weighted_mean=np.array([0.3]), normalizer=1.0)
    p = np.linspace(-3, 3, 101)[:, None]
    x = np.zeros_like(p)
    base = HamiltonianEvaluator(model)
    for mode in ("auto", "numeric"):
        ev = DriftTransformedEvaluator(HamiltonianEvaluator(model, mode, tol=1e-12), LinearDrift(2.0))
        hb, bb = ev.hamiltonian(0.0, x, p, s)
        h2, a2 = base.hamiltonian(0.0, x, 2 * p, s)
        np.testing.assert_allclose(hb, h2, atol=1e-8)
        np.testing.assert_allclose(bb, 2 * a2, atol=1e-8)


def test_quadratic_with_doubling_drift_is_2p_squared():
    ev = DriftTransformedEvaluator(HamiltonianEvaluator(PowerLagrangian()), LinearDrift(2.0))
    p = np.linspace(-3, 3, 61)[:, None]
    h, _ = ev.hamiltonian(0.0, np.zeros_like(p), p, NONE)
    np.testing.assert_allclose(h, 2 * p[:, 0] ** 2, rtol=1e-14)


@pytest.mark.parametrize("s", [0.25, 0.5, 1.0])
def test_saturating_hamiltonian_against_scalar_optimizer(s):
    model = PowerLagrangian()
    drift = SaturatingDrift(s)
    ps = np.linspace(-3, 3, 13)
    h, _ = transformed_hamiltonian(HamiltonianEvaluator(model), drift, 0.0, np.zeros((13, 1)), ps[:, None], NONE)
    for p, hv in zip(ps, h):
        # sup over controls of -p b(a) - a^2/2
        obj = lambda a: p * drift.apply(0, 0, np.array([a]))[0] + 0.5 * a * a
        res = minimize_scalar(obj, bracket=(-5, 0, 5), tol=1e-14)
        assert hv == pytest.approx(-res.fun, abs=1e-9)


def test_identity_drift_delegates_bitwise():
    model = CrowdMotionModel(CrowdMotionParams(lam=1.0))
    base = HamiltonianEvaluator(model)
    ev = DriftTransformedEvaluator(base, IdentityDrift())
    s = LawSummary("kernel_mean", weighted_mean=np.array([0.3]), normalizer=1.0)
    p = np.random.default_rng(0).normal(size=(20, 1))
    x = np.zeros_like(p)
    for a, b in zip(ev.hamiltonian(0.0, x, p, s), base.hamiltonian(0.0, x, p, s)):
        np.testing.assert_array_equal(a, b)


def test_transformed_lagrangian_outside_range_is_infinite():
    lb = TransformedLagrangian(PowerLagrangian(), SaturatingDrift(1.0))
    vals = lb.lagrangian(0.0, np.zeros((3, 1)), np.array([[0.5], [1.0], [3.0]]), NONE)
    assert np.isfinite(vals[0]) and np.all(np.isinf(vals[1:]))
    a = 0.5 / np.sqrt(0.75)
    assert vals[0] == pytest.approx(0.5 * a * a, rel=1e-14)


def test_transformed_gradient_and_hessian_by_finite_differences():
    lb = TransformedLagrangian(PowerLagrangian(1, 3.0), SaturatingDrift(0.5))
    b = np.linspace(-2, 2, 9)[:, None] + 0.05
    x = np.zeros_like(b)
    eps = 1e-6
    fd = (lb.lagrangian(0, x, b + eps, NONE) - lb.lagrangian(0, x, b - eps, NONE)) / (2 * eps)
    np.testing.assert_allclose(lb.grad_alpha(0, x, b, NONE)[:, 0], fd, rtol=1e-6, atol=1e-8)
    g = lambda v: lb.grad_alpha(0, x, v, NONE)[:, 0]
    fdh = (g(b + 1e-5) - g(b - 1e-5)) / 2e-5
    np.testing.assert_allclose(lb.hess_alpha(0, x, b, NONE)[:, 0, 0], fdh, rtol=1e-4)


# -- laws ----------------------------------------------------------------------


def test_push_and_recover_keep_summary(grid1):
    model = ExhaustibleLinearModel(0.5)
    drift = SaturatingDrift(0.5)
    m = grid1.uniform_density()
    a = np.sin(grid1.coords)
    law = ControlLaw(grid1, m, a, model.summarize(grid1, m, a))
    pushed = push_control_law(law, drift)
    assert pushed.summary is law.summary
    back = recover_control_law(pushed, drift)
    np.testing.assert_allclose(back.control, a, atol=1e-13)
    # the transformed model reads the same statistics from drift fields
    lb = TransformedLagrangian(model, drift)
    np.testing.assert_allclose(lb.summarize(grid1, m, pushed.control).mean_control,
                               law.summary.mean_control, atol=1e-14)


# -- equivalence of the two formulations ----------------------------------------


@pytest.fixture(scope="module")
def doubled_crowd():
    problem = make_problem(CrowdMotionModel(CrowdMotionParams(lam=1.0)), points=32, steps=20,
                           drift=LinearDrift(2.0))
    return problem, solve(problem, OuterOptions(schedule=(1.0,)))


def test_linear_drift_equivalence(doubled_crowd):
    problem, rep = doubled_crowd
    assert rep.converged
    check = equivalence_check(problem, rep, tol=1e-7)
    assert check["passed"], check


def test_equivalence_detects_corrupted_controls(doubled_crowd):
    problem, rep = doubled_crowd
    # a 1% shift of the drift field (the symmetric setup has zero mean control)
    bad = [ControlLaw(l.grid, l.density, l.control + 0.01, l.summary) for l in rep.laws]
    rep_bad = type(rep)(**{**rep.__dict__, "laws": bad})
    check = equivalence_check(problem, rep_bad, tol=1e-7)
    assert not check["passed"]
    assert check["mu_alpha_res"] > 1e-7 and check["fpk_res"] > 1e-7


def test_identity_drift_solution_is_bitwise_identical():
    model = ExhaustibleLinearModel(0.5)
    plain = solve(make_problem(model, points=32, steps=20), OuterOptions(schedule=(1.0,)))
    ident = solve(make_problem(model, points=32, steps=20, drift=IdentityDrift()), OuterOptions(schedule=(1.0,)))
    np.testing.assert_array_equal(plain.u, ident.u)
    np.testing.assert_array_equal(plain.m, ident.m)


@pytest.mark.slow
def test_saturating_drift_solve_on_small_grid():
    problem = make_problem(CrowdMotionModel(CrowdMotionParams(lam=1.0)), points=16, steps=8,
                           drift=SaturatingDrift(0.5))
    rep = solve(problem, OuterOptions(schedule=(1.0,)))
    assert rep.converged
    assert equivalence_check(problem, rep, tol=1e-7)["passed"]
