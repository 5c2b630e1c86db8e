import math

import numpy as np
import pytest

from neumannlab.asymptotics import case1_rate, case2_ratio, energy_identity_residual
from neumannlab.mismatch import scan
from neumannlab.nonlinearity import AffineFlux, ConstantFlux, LinearReaction, PaperSinhFlux, SinhReaction
from neumannlab.rstar import estimate_rstar
from neumannlab.solver import Problem, boundary_derivative, solve_dirichlet, verify_comparison


@pytest.mark.parametrize("epsilon", [1., 0.1, 0.05])
@pytest.mark.parametrize("lam", [0.5, 1., 2.])
def test_linear_1d_flux(epsilon, lam):
    solution = solve_dirichlet(Problem(1, epsilon, LinearReaction(1.)), lam)
    assert boundary_derivative(solution) == pytest.approx(lam * math.tanh(1. / epsilon), rel=1e-6)


@pytest.mark.parametrize("epsilon", [0.5, 0.1])
def test_linear_3d_flux(epsilon):
    solution = solve_dirichlet(Problem(3, epsilon, LinearReaction(1.)), 1.)
    assert boundary_derivative(solution) == pytest.approx(1. / math.tanh(1. / epsilon) - epsilon, rel=1e-5)


@pytest.mark.parametrize("reaction", [SinhReaction(), LinearReaction(1.)], ids=repr)
@pytest.mark.parametrize("dimension", [1, 2, 3])
@pytest.mark.parametrize("epsilon", [0.1, 0.05, 0.02])
@pytest.mark.parametrize("lam", [0.5, 1., 2., 5.])
def test_energy_identity_sweep(reaction, dimension, epsilon, lam):
    residual = energy_identity_residual(solve_dirichlet(Problem(dimension, epsilon, reaction), lam))
    assert abs(residual.residual) <= 1e-8 * (1. + abs(float(reaction.F(lam))))


def test_box_and_monotonicity_randomized():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        reaction = SinhReaction() if rng.random() < 0.5 else LinearReaction(rng.uniform(0.5, 3.))
        dimension = int(rng.integers(1, 5))
        epsilon = float(np.exp(rng.uniform(np.log(0.02), np.log(1.))))
        lam = float(rng.uniform(-8., 8.))
        solution = solve_dirichlet(Problem(dimension, epsilon, reaction), lam)
        U = solution.values
        slack = 1e-10 * (1. + abs(lam))
        assert np.all(U >= min(0., lam) - slack)
        assert np.all(U <= max(0., lam) + slack)
        assert np.all(lam * np.diff(U) >= -slack * abs(lam))


@pytest.mark.parametrize("epsilon", [0.05, 0.02])
@pytest.mark.parametrize("lam", [0.5, 2.])
def test_decay_envelope(epsilon, lam):
    report = verify_comparison(solve_dirichlet(Problem(2, epsilon, SinhReaction()), lam), 1.)
    assert report.decay_ok


def test_case1_bound():
    fit = case1_rate(SinhReaction(), 2, 1., [0.1, 0.05, 0.025, 0.0125])
    assert fit.checks["bound_ok"]
    assert fit.checks["decreasing_ok"]
    for eps, quantity in zip(fit.epsilons, fit.quantities):
        assert quantity <= 2. * math.sinh(1.) * eps


def test_case2_ratio():
    fit = case2_ratio(SinhReaction(), 2, [0.1, 0.05, 0.025, 0.0125])
    assert fit.checks["final_ratio_ok"]
    assert fit.checks["monotone_ok"]
    assert fit.checks["below_one_ok"]


def test_no_root_for_sinh_pair():
    problem = Problem.from_radius(2, 20., SinhReaction())
    report = scan(problem, PaperSinhFlux(1), -10., 10., n_samples=201).report()
    assert report.n_roots == 0
    assert report.phi_sign_pattern == "all_negative"
    assert report.min_abs_phi >= 0.5


@pytest.mark.parametrize("epsilon", [0.5, 0.1])
def test_existence_control_root(epsilon):
    curve = scan(Problem(1, epsilon, LinearReaction(1.)), ConstantFlux(1.), 0., 5., n_samples=101)
    assert len(curve.roots) == 1
    assert curve.roots[0].lam == pytest.approx(1. / math.tanh(1. / epsilon), rel=1e-6)


def test_threshold_bracketing_with_trace():
    with pytest.warns(UserWarning):
        estimate = estimate_rstar(LinearReaction(1.), AffineFlux(1., 1.), scan_window=(-10., 10.), r_min=0.5, r_max=20.,
                                  dimension=1, n_samples=101, trace_ladder=[0.5, 1., 2., 5., 10., 20.])
    assert estimate.status == "bracketed"
    assert estimate.r_low <= math.atanh(0.9) <= estimate.r_high


def test_threshold_for_sinh_pair_is_below_the_radius_range():
    estimate = estimate_rstar(SinhReaction(), PaperSinhFlux(1), r_min=0.5, r_max=20., dimension=2, n_samples=101,
                              trace_ladder=[0.5, 1., 2., 5., 10., 20.])
    assert estimate.status == "no_root_anywhere"
