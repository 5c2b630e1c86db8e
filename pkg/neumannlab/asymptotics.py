import dataclasses
import math
import warnings
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from neumannlab.base import DomainError, PreconditionError, SolverError
from neumannlab.solver import MeshSpec, Problem, solve_dirichlet, verify_comparison

CASE1_SLOPE_RANGE = (0.7, 1.3)
CASE2_FINAL_RANGE = (0.85, 1.15)
MONOTONE_SLACK = 1e-6
FIT_RUNGS = 4


@dataclasses.dataclass
class IdentityResidual:
    lam: float
    epsilon: float
    lhs: float
    integral_term: float
    origin_term: float
    residual: float

    def to_dict(self):
        return {"epsilon": self.epsilon, "lambda": self.lam, "lhs": self.lhs, "integral_term": self.integral_term,
                "origin_term": self.origin_term, "residual": self.residual}


def energy_identity_residual(solution):
    """
    Evaluates eps^2 U'(1)^2 / 2 - F(lambda) + (2N-2) int_0^1 x^(2N-3) F(U) dx + [N = 1] F(U(0)).

    The integral uses the product quadrature of the box scheme on the solution mesh,
    for which the identity holds exactly up to the Newton residual.
    """
    problem = solution.problem
    lam = solution.lam
    if lam == 0.:
        return IdentityResidual(lam=0., epsilon=problem.epsilon, lhs=0., integral_term=0., origin_term=0., residual=0.)
    reaction = problem.reaction
    power = 2 * problem.dimension - 2
    x = solution.mesh.nodes
    F = reaction.F(solution.values)
    lhs = solution.boundary_derivative ** 2 / 2. - float(reaction.F(lam))
    if power == 0:
        integral_term = 0.
        origin_term = float(F[0])
    else:
        squared = ((x[1:] + x[:-1]) / 2.) ** power
        weights = x ** power
        integral_term = float(np.sum((weights[1:] - squared) * F[1:] + (squared - weights[:-1]) * F[:-1]))
        origin_term = 0.
    return IdentityResidual(
        lam=lam,
        epsilon=problem.epsilon,
        lhs=lhs,
        integral_term=integral_term,
        origin_term=origin_term,
        residual=lhs + integral_term + origin_term,
    )


@dataclasses.dataclass
class RateFit:
    """
    Per-rung quantities of an eps ladder, with their bounds, a log-log slope fit
    over the last rungs and the named pass/fail checks of the sweep.
    """
    mode: str
    epsilons: List[float]
    lambdas: List[float]
    quantities: List[float]
    bounds: List[Optional[float]]
    fitted_slope: float
    expected_slope_range: Optional[Tuple[float, float]]
    checks: Dict[str, Optional[bool]]
    failed: List[Tuple[float, str]] = dataclasses.field(default_factory=list)

    def to_frame(self):
        return pd.DataFrame({
            "epsilon": self.epsilons,
            "lambda": self.lambdas,
            "quantity": self.quantities,
            "bound": self.bounds,
        }, columns=["epsilon", "lambda", "quantity", "bound"])

    def to_dict(self):
        return dataclasses.asdict(self)


def _check_ladder(epsilons):
    epsilons = [float(eps) for eps in epsilons]
    if len(epsilons) < FIT_RUNGS:
        raise PreconditionError(f"eps ladder needs at least {FIT_RUNGS} rungs, got {len(epsilons)}")
    if any(eps <= 0 for eps in epsilons) or any(b >= a for a, b in zip(epsilons[:-1], epsilons[1:])):
        raise PreconditionError(f"eps ladder must be positive and strictly decreasing, got {epsilons}")
    return epsilons


def _coercivity(reaction, M):
    M = reaction.M if M is None else M
    if M is None or not M > 0:
        raise PreconditionError(f"{reaction.registry_name} has no known coercivity constant, pass M explicitly")
    return float(M)


def fit_slope(epsilons, quantities, rungs=FIT_RUNGS):
    """Least-squares slope of log(quantity) against log(eps) over the last `rungs` positive values"""
    pairs = [(e, q) for e, q in zip(epsilons, quantities) if q > 0 and math.isfinite(q)][-rungs:]
    if len(pairs) < 2:
        return float("nan")
    e, q = np.array(pairs).T
    return float(np.polyfit(np.log(e), np.log(q), 1)[0])


def _ladder_solves(reaction, dimension, epsilons, lambdas, mesh, tol, progress, desc):
    solutions = []
    failed = []
    for epsilon, lam in tqdm(list(zip(epsilons, lambdas)), desc=desc, disable=not progress, leave=False):
        try:
            solutions.append(solve_dirichlet(Problem(dimension, epsilon, reaction), lam, mesh=mesh, tol=tol))
        except (SolverError, DomainError) as e:
            failed.append((epsilon, str(e)))
    if failed:
        warnings.warn(f"{len(failed)} ladder rung(s) failed: " + "; ".join(f"eps={eps:g}: {msg}" for eps, msg in failed))
    return solutions, failed


def identity_ladder(reaction, dimension, lam, epsilons, mesh=None, tol=1e-10, progress=False):
    """Energy identity residual at each rung of an eps ladder"""
    solutions, failed = _ladder_solves(reaction, dimension, epsilons, [lam] * len(epsilons), mesh, tol, progress, "identity")
    return [energy_identity_residual(solution) for solution in solutions], failed


def case1_rate(reaction, dimension, lam, epsilons, M=None, mesh=None, tol=1e-10, progress=False):
    """
    Fixed datum lambda: |eps^2 U'(1)^2 / 2 - F(lambda)| along a decreasing eps ladder,
    bounded pointwise by 2 |lambda f(lambda)| eps / M and expected to decay like eps for N >= 2.
    """
    lam = float(lam)
    if lam == 0.:
        raise PreconditionError("case 1 needs a fixed lambda != 0")
    epsilons = _check_ladder(epsilons)
    M = _coercivity(reaction, M)
    F_lam = float(reaction.F(reaction.check_domain(lam)))
    f_lam = float(reaction.f(lam))

    solutions, failed = _ladder_solves(reaction, dimension, epsilons, [lam] * len(epsilons), mesh, tol, progress, "case1")
    eps_done = [solution.problem.epsilon for solution in solutions]
    quantities = [abs(solution.boundary_derivative ** 2 / 2. - F_lam) for solution in solutions]
    bounds = [2. * abs(lam * f_lam) * eps / M for eps in eps_done]
    slope = fit_slope(eps_done, quantities)
    expected = CASE1_SLOPE_RANGE if dimension >= 2 else None
    checks = {
        "bound_ok": all(q <= b for q, b in zip(quantities, bounds)),
        "decreasing_ok": all(b <= a for a, b in zip(quantities[:-1], quantities[1:])),
        "slope_ok": (expected[0] <= slope <= expected[1]) if expected is not None else None,
    }
    return RateFit(
        mode="case1",
        epsilons=eps_done,
        lambdas=[lam] * len(eps_done),
        quantities=quantities,
        bounds=bounds,
        fitted_slope=slope,
        expected_slope_range=expected,
        checks=checks,
        failed=failed,
    )


def inverse_epsilon_schedule(cap=50.):
    def schedule(epsilon):
        return min(1. / epsilon, cap)

    return schedule


def case2_ratio(reaction, dimension, epsilons, schedule=None, M=None, mesh=None, tol=1e-10,
                require_growth=True, progress=False):
    """
    Growing datum lambda(eps): ratio eps^2 U'(1)^2 / (2 F(lambda(eps))) along a decreasing eps ladder.

    The ratio never exceeds 1 (the weighted integral of F(U) is non-negative), its
    deviation from 1 is bounded by 2 (2N-2) eps / M, and it should approach 1 monotonically.

    Parameters
    ----------
    reaction: ReactionTerm
    dimension: int
    epsilons: list of float
    schedule: callable or float
        eps -> lambda(eps); 1/eps capped at 50 by default. A float gives a constant datum,
        which is only accepted with require_growth=False (closed-form checks)
    M: float
    mesh: Mesh or MeshSpec
        Geometric grading with 512 cells by default
    tol: float
    require_growth: bool
        Reject schedules along which lambda does not grow
    progress: bool

    Returns
    -------
    RateFit
    """
    epsilons = _check_ladder(epsilons)
    M = _coercivity(reaction, M)
    if schedule is None:
        schedule = inverse_epsilon_schedule()
    if callable(schedule):
        lambdas = [float(schedule(eps)) for eps in epsilons]
    else:
        lambdas = [float(schedule)] * len(epsilons)
    if any(lam == 0. for lam in lambdas):
        raise PreconditionError("case 2 needs lambda(eps) != 0")
    magnitudes = np.abs(lambdas)
    if require_growth and (np.any(np.diff(magnitudes) < 0) or magnitudes[-1] <= magnitudes[0]):
        raise PreconditionError(f"lambda(eps) must grow as eps decreases, got {lambdas}")
    for lam in lambdas:
        reaction.check_domain(lam)
    if mesh is None:
        mesh = MeshSpec(512, "geometric")

    solutions, failed = _ladder_solves(reaction, dimension, epsilons, lambdas, mesh, tol, progress, "case2")
    eps_done = [solution.problem.epsilon for solution in solutions]
    lam_done = [solution.lam for solution in solutions]
    quantities = [solution.boundary_derivative ** 2 / (2. * float(reaction.F(solution.lam))) for solution in solutions]
    bounds = [2. * (2 * dimension - 2) * eps / M for eps in eps_done]
    deviations = [abs(1. - q) for q in quantities]
    checks = {
        "final_ratio_ok": bool(quantities) and CASE2_FINAL_RANGE[0] <= quantities[-1] <= CASE2_FINAL_RANGE[1],
        "monotone_ok": all(b >= a - MONOTONE_SLACK for a, b in zip(quantities[:-1], quantities[1:])),
        "deviation_ok": all(d <= b + MONOTONE_SLACK for d, b in zip(deviations, bounds)),
        "below_one_ok": all(q <= 1. + MONOTONE_SLACK for q in quantities),
    }
    return RateFit(
        mode="case2",
        epsilons=eps_done,
        lambdas=lam_done,
        quantities=quantities,
        bounds=bounds,
        fitted_slope=fit_slope(eps_done, deviations),
        expected_slope_range=None,
        checks=checks,
        failed=failed,
    )


def decay_envelope(solution, M=None):
    """Decay envelope check of one solution, see `verify_comparison`"""
    return verify_comparison(solution, _coercivity(solution.problem.reaction, M))


def decay_ladder(reaction, dimension, lam, epsilons, M=None, mesh=None, tol=1e-10, progress=False):
    """
    Sweeps `decay_envelope` along an eps ladder. The quantity is the largest ratio of |U|
    to its envelope 2 |lambda| exp(-M (1 - x) / (4 eps)) + 1e-9, to be kept below 1.
    """
    lam = float(lam)
    if lam == 0.:
        raise PreconditionError("decay envelope needs lambda != 0")
    epsilons = [float(eps) for eps in epsilons]
    if not epsilons:
        raise PreconditionError("empty eps ladder")
    M = _coercivity(reaction, M)
    solutions, failed = _ladder_solves(reaction, dimension, epsilons, [lam] * len(epsilons), mesh, tol, progress, "decay")
    reports = [decay_envelope(solution, M) for solution in solutions]
    checked = [(solution, report) for solution, report in zip(solutions, reports) if report.decay_ok is not None]
    checks = {
        "decay_ok": all(report.decay_ok for _, report in checked) if checked else None,
        "box_ok": all(report.box_ok for report in reports),
        "monotonicity_ok": all(report.monotonicity_ok for report in reports),
    }
    return RateFit(
        mode="decay",
        epsilons=[solution.problem.epsilon for solution, _ in checked],
        lambdas=[lam] * len(checked),
        quantities=[report.max_envelope_ratio for _, report in checked],
        bounds=[1.] * len(checked),
        fitted_slope=float("nan"),
        expected_slope_range=None,
        checks=checks,
        failed=failed,
    )
