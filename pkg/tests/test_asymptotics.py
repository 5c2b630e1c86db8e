import math

import numpy as np
import pytest

from neumannlab.asymptotics import (
    case1_rate, case2_ratio, decay_ladder, energy_identity_residual, fit_slope, identity_ladder, inverse_epsilon_schedule,
)
from neumannlab.base import PreconditionError
from neumannlab.nonlinearity import LinearReaction, OddPowerReaction, SinhReaction
from neumannlab.solver import MeshSpec, Problem, solve_dirichlet


@pytest.mark.parametrize("dimension", [1, 2, 3])
@pytest.mark.parametrize("epsilon", [0.05, 0.2])
@pytest.mark.parametrize("lam", [-3., 0.5, 4.])
def test_energy_identity_holds_discretely(dimension, epsilon, lam):
    reaction = SinhReaction()
    solution = solve_dirichlet(Problem(dimension, epsilon, reaction), lam)
    residual = energy_identity_residual(solution)
    assert abs(residual.residual) <= 1e-8 * (1. + float(reaction.F(lam)))
    assert residual.integral_term >= 0.
    if dimension == 1:
        assert residual.integral_term == 0.
        assert residual.origin_term == pytest.approx(float(reaction.F(solution.values[0])))
    else:
        assert residual.origin_term == 0.


def test_energy_identity_linear_1d_closed_form():
    solution = solve_dirichlet(Problem(1, 0.5, LinearReaction(1.)), 2.)
    residual = energy_identity_residual(solution)
    assert residual.lhs == pytest.approx(-2. / math.cosh(2.) ** 2, rel=1e-5)
    assert set(residual.to_dict()) == {"epsilon", "lambda", "lhs", "integral_term", "origin_term", "residual"}


def test_energy_identity_zero_datum():
    residual = energy_identity_residual(solve_dirichlet(Problem(2, 0.1, SinhReaction()), 0.))
    assert residual.residual == 0.


def test_identity_ladder():
    residuals, failed = identity_ladder(SinhReaction(), 3, 2., [0.2, 0.1, 0.05])
    assert failed == []
    assert [r.epsilon for r in residuals] == [0.2, 0.1, 0.05]
    assert all(abs(r.residual) <= 1e-8 * (1. + math.cosh(2.)) for r in residuals)


def test_fit_slope():
    eps = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    assert fit_slope(eps, 3. * eps ** 2) == pytest.approx(2.)
    assert math.isnan(fit_slope(eps, np.zeros(5)))


def test_case1_sinh_rate():
    fit = case1_rate(SinhReaction(), 2, 1., [0.2, 0.1, 0.05, 0.025, 0.0125])
    assert fit.failed == []
    assert fit.checks == {"bound_ok": True, "decreasing_ok": True, "slope_ok": True}
    assert 0.7 <= fit.fitted_slope <= 1.3
    frame = fit.to_frame()
    assert list(frame.columns) == ["epsilon", "lambda", "quantity", "bound"]
    assert np.all(frame["quantity"] <= frame["bound"])


def test_case1_linear_1d_is_origin_energy():
    epsilons = [0.5, 0.4, 0.3, 0.2]
    fit = case1_rate(LinearReaction(1.), 1, 1., epsilons)
    expected = [0.5 / math.cosh(1. / eps) ** 2 for eps in epsilons]
    np.testing.assert_allclose(fit.quantities, expected, rtol=1e-3)
    assert fit.checks["bound_ok"] and fit.checks["decreasing_ok"]
    assert fit.checks["slope_ok"] is None
    assert fit.expected_slope_range is None


def test_case1_preconditions():
    with pytest.raises(PreconditionError):
        case1_rate(SinhReaction(), 2, 0., [0.4, 0.2, 0.1, 0.05])
    with pytest.raises(PreconditionError):
        case1_rate(SinhReaction(), 2, 1., [0.2, 0.1, 0.05])
    with pytest.raises(PreconditionError):
        case1_rate(SinhReaction(), 2, 1., [0.1, 0.2, 0.05, 0.025])
    with pytest.raises(PreconditionError, match="coercivity"):
        case1_rate(OddPowerReaction(3.), 2, 1., [0.4, 0.2, 0.1, 0.05])


def test_inverse_epsilon_schedule():
    schedule = inverse_epsilon_schedule()
    assert schedule(0.1) == 10.
    assert schedule(0.01) == 50.


def test_case2_sinh_ratio():
    fit = case2_ratio(SinhReaction(), 2, [0.1, 0.05, 0.04, 0.03, 0.025, 0.02])
    assert fit.failed == []
    assert fit.lambdas == [10., 20., 25., pytest.approx(100. / 3.), 40., 50.]
    assert all(fit.checks.values())
    assert max(fit.quantities) <= 1. + 1e-6
    assert fit.quantities[-1] == pytest.approx(1., abs=0.15)


def test_case2_linear_1d_constant_datum():
    epsilons = [0.1, 0.08, 0.06, 0.05]
    fit = case2_ratio(LinearReaction(1.), 1, epsilons, schedule=2., require_growth=False)
    np.testing.assert_allclose(fit.quantities, [math.tanh(1. / eps) ** 2 for eps in epsilons], atol=1e-9)
    assert fit.bounds == [0.] * 4
    assert all(fit.checks.values())


def test_case2_rejects_non_growing_schedule():
    with pytest.raises(PreconditionError, match="grow"):
        case2_ratio(SinhReaction(), 2, [0.1, 0.05, 0.04, 0.03], schedule=5.)
    with pytest.raises(PreconditionError):
        case2_ratio(SinhReaction(), 2, [0.1, 0.05, 0.04, 0.03], schedule=lambda eps: 0.)


def test_decay_ladder_sinh():
    fit = decay_ladder(SinhReaction(), 2, 2., [0.2, 0.1, 0.05], mesh=MeshSpec(512, "layer"))
    assert fit.checks == {"decay_ok": True, "box_ok": True, "monotonicity_ok": True}
    assert fit.epsilons == [0.2, 0.1, 0.05]
    assert all(q <= 1. for q in fit.quantities)


def test_decay_ladder_skips_rungs_outside_range():
    with pytest.warns(UserWarning, match="decay envelope not checked"):
        fit = decay_ladder(SinhReaction(), 3, 1., [0.5, 0.1])
    assert fit.epsilons == [0.1]
    assert fit.checks["decay_ok"]
