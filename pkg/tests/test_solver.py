import math

import numpy as np
import pytest

from neumannlab.base import DomainError, PreconditionError, SolverError
from neumannlab.nonlinearity import LinearReaction, SinhReaction
from neumannlab.solver import (
    MeshSpec, Problem, boundary_derivative, build_mesh, first_integral_profile, solve_dirichlet, verify_comparison,
)


def linear_1d_profile(x, eps, lam):
    return lam * np.cosh(x / eps) / np.cosh(1. / eps)


def linear_3d_profile(x, eps, lam):
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0., 1., x)
    return np.where(x == 0., lam / (eps * np.sinh(1. / eps)), lam * np.sinh(safe / eps) / (safe * np.sinh(1. / eps)))


def test_uniform_mesh():
    mesh = build_mesh(0.1, 64, "uniform")
    np.testing.assert_array_equal(mesh.nodes, np.arange(65) / 64.)
    assert mesh.n == 64


def test_layer_mesh_defaults():
    mesh = build_mesh(0.01, 128, "layer")
    assert mesh.n == 128
    assert mesh.width == pytest.approx(0.08)
    assert np.sum(mesh.nodes >= 1. - 0.08) == 64
    assert mesh.nodes[0] == 0. and mesh.nodes[-1] == 1.
    assert np.all(np.diff(mesh.nodes) > 0)


def test_layer_width_is_clamped():
    assert build_mesh(0.5, 64, "layer").width == 0.5


def test_geometric_mesh_resolves_inner_scale():
    slope = float(SinhReaction().df(20.))
    mesh = build_mesh(0.05, 512, "geometric", slope=slope)
    assert mesh.n == 512
    assert np.all(np.diff(mesh.nodes) > 0)
    assert mesh.steps[-1] == pytest.approx(0.05 / math.sqrt(slope) / 4., rel=1e-6)
    assert np.sum(mesh.nodes >= 1. - 0.4) == 257


@pytest.mark.parametrize("kwargs", [
    dict(epsilon=0.1, n=16, grading="uniform"),
    dict(epsilon=0.1, n=64, grading="layer", width=1.5),
    dict(epsilon=0.1, n=64, grading="layer", width=0.),
    dict(epsilon=0.1, n=64, grading="spiral"),
])
def test_mesh_preconditions(kwargs):
    with pytest.raises(PreconditionError):
        build_mesh(**kwargs)


def test_problem_from_radius():
    problem = Problem.from_radius(2, 20., SinhReaction())
    assert problem.epsilon == 0.05
    assert problem.radius == 20.
    with pytest.raises(PreconditionError):
        Problem(0, 0.1, SinhReaction())
    with pytest.raises(PreconditionError):
        Problem(2, -0.1, SinhReaction())


def test_zero_datum_is_trivial():
    solution = solve_dirichlet(Problem(2, 0.05, SinhReaction()), 0.)
    assert np.all(solution.values == 0.)
    assert boundary_derivative(solution) == 0.
    assert solution.interior_residual_norm == 0.


def test_linear_1d_nodal_values():
    mesh = build_mesh(0.1, 1000, "uniform")
    solution = solve_dirichlet(Problem(1, 0.1, LinearReaction(1.)), 1., mesh=mesh)
    x = mesh.nodes[900]
    assert x == pytest.approx(0.9)
    assert solution.values[900] == pytest.approx(float(linear_1d_profile(x, 0.1, 1.)), rel=1e-4)
    assert linear_1d_profile(0.9, 0.1, 1.) == pytest.approx(0.3678797, rel=1e-6)


def test_linear_1d_boundary_derivative():
    solution = solve_dirichlet(Problem(1, 0.1, LinearReaction(1.)), 1.)
    assert boundary_derivative(solution) == pytest.approx(math.tanh(10.), rel=1e-6)
    assert solution.values[-1] == 1.
    assert solution.interior_residual_norm <= 1e-10


def test_linear_3d_boundary_derivative():
    solution = solve_dirichlet(Problem(3, 0.5, LinearReaction(1.)), 2.)
    assert boundary_derivative(solution) == pytest.approx(2. * (1. / math.tanh(2.) - 0.5), rel=1e-5)
    assert 2. * (1. / math.tanh(2.) - 0.5) == pytest.approx(1.0746294, rel=1e-7)
    fine = solve_dirichlet(Problem(3, 0.5, LinearReaction(1.)), 2., mesh=build_mesh(0.5, 2048, "uniform"))
    assert boundary_derivative(fine) == pytest.approx(1.0746294, rel=1e-6)


@pytest.mark.parametrize("dimension,profile", [(1, linear_1d_profile), (3, linear_3d_profile)])
def test_linear_oracle_second_order(dimension, profile):
    eps, lam = 0.5, 2.
    errors = []
    for n in (64, 128, 256):
        mesh = build_mesh(eps, n, "uniform")
        solution = solve_dirichlet(Problem(dimension, eps, LinearReaction(1.)), lam, mesh=mesh)
        errors.append(np.max(np.abs(solution.values - profile(mesh.nodes, eps, lam))))
    errors = np.array(errors)
    assert np.all(errors[:-1] / errors[1:] > 3.5)
    scaled = errors * np.array([64, 128, 256]) ** 2
    assert scaled.max() / scaled.min() < 1.3


def test_self_convergence_sinh():
    problem = Problem(2, 0.1, SinhReaction())

    def flux(n):
        return boundary_derivative(solve_dirichlet(problem, 1., mesh=build_mesh(0.1, n, "uniform")))

    reference = flux(1024)
    errors = np.array([abs(flux(n) - reference) for n in (128, 256, 512)])
    orders = np.log2(errors[:-1] / errors[1:])
    assert np.all(orders >= 1.8)


def test_odd_symmetry():
    problem = Problem(2, 0.05, SinhReaction())
    up = solve_dirichlet(problem, 3.)
    down = solve_dirichlet(problem, -3.)
    np.testing.assert_allclose(down.values, -up.values, rtol=0, atol=1e-12)
    assert down.boundary_derivative == pytest.approx(-up.boundary_derivative, abs=1e-12)


def test_determinism():
    problem = Problem(3, 0.05, SinhReaction())
    first = solve_dirichlet(problem, 4.)
    second = solve_dirichlet(problem, 4.)
    assert np.array_equal(first.values, second.values)
    assert first.boundary_derivative == second.boundary_derivative


def test_comparison_bounds_random_sweep():
    rng = np.random.default_rng(12)
    for _ in range(30):
        lam = rng.uniform(0.05, 5.) * rng.choice([-1., 1.])
        eps = rng.uniform(0.02, 0.5)
        dimension = int(rng.choice([2, 3, 4]))
        solution = solve_dirichlet(Problem(dimension, eps, SinhReaction()), lam)
        report = verify_comparison(solution, 1.)
        assert report.box_ok, (lam, eps, dimension, report)
        assert report.monotonicity_ok, (lam, eps, dimension, report)


def test_comparison_sinh_example():
    solution = solve_dirichlet(Problem(2, 0.05, SinhReaction()), 2.)
    report = verify_comparison(solution, 1.)
    assert report.monotonicity_ok and report.box_ok and report.decay_ok
    assert report.epsilon_limit == pytest.approx(1. / math.sqrt(2.))
    assert report.max_envelope_ratio <= 1.


def test_comparison_linear_1d_decay():
    solution = solve_dirichlet(Problem(1, 0.1, LinearReaction(1.)), 1.)
    report = verify_comparison(solution, 1.)
    assert report.decay_ok
    assert report.epsilon_limit is None


def test_comparison_outside_epsilon_range_warns():
    solution = solve_dirichlet(Problem(3, 0.5, SinhReaction()), 1.)
    with pytest.warns(UserWarning, match="decay envelope not checked"):
        report = verify_comparison(solution, 1.)
    assert report.decay_ok is None
    assert report.box_ok


def test_comparison_rejects_zero_datum():
    solution = solve_dirichlet(Problem(2, 0.05, SinhReaction()), 0.)
    with pytest.raises(PreconditionError):
        verify_comparison(solution, 1.)


def test_overflow_datum_is_a_domain_error():
    with pytest.raises(DomainError):
        solve_dirichlet(Problem(2, 0.05, SinhReaction()), 1000.)


def test_iteration_starvation_is_a_solver_error():
    with pytest.raises(SolverError) as info:
        solve_dirichlet(Problem(2, 0.02, SinhReaction()), 5., max_iter=1)
    assert info.value.residual_norm > 1e-10


def test_large_datum_on_geometric_mesh():
    problem = Problem(2, 0.02, SinhReaction())
    solution = solve_dirichlet(problem, 50., mesh=MeshSpec(512, "geometric"))
    report = verify_comparison(solution, 1.)
    assert report.box_ok and report.monotonicity_ok
    assert solution.boundary_derivative ** 2 / (2. * float(SinhReaction().F(50.))) == pytest.approx(1., abs=0.15)


def test_first_integral_is_constant_in_1d():
    solution = solve_dirichlet(Problem(1, 0.1, SinhReaction()), 2.)
    profile = first_integral_profile(solution)
    assert np.ptp(profile) <= 1e-9 * (1. + float(SinhReaction().F(2.)))
    with pytest.raises(PreconditionError):
        first_integral_profile(solve_dirichlet(Problem(2, 0.1, SinhReaction()), 2.))


def test_solution_frame():
    solution = solve_dirichlet(Problem(2, 0.1, SinhReaction()), 1.)
    frame = solution.to_frame()
    assert list(frame.columns) == ["x", "U", "dU"]
    assert frame["dU"].iloc[0] == 0.
    assert frame["dU"].iloc[-1] == solution.boundary_derivative
