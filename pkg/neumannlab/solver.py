import dataclasses
import math
import warnings
from typing import Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from neumannlab.base import DomainError, PreconditionError, SolverError
from neumannlab.nonlinearity import ReactionTerm

GRADINGS = ("uniform", "layer", "geometric")
MIN_CELL = 1.4e-14


@dataclasses.dataclass(frozen=True)
class Problem:
    """
    Scaled radial Dirichlet problem

        -eps^2 (U'' + (N-1)/x U') + f(U) = 0 on (0, 1),  U'(0) = 0,  U(1) = lambda

    obtained from the ball of radius R with x = r / R and eps = 1 / R.
    """
    dimension: int
    epsilon: float
    reaction: ReactionTerm

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise PreconditionError(f"dimension must be an integer >= 1, got {self.dimension}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise PreconditionError(f"epsilon must be a finite positive number, got {self.epsilon}")
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_radius(cls, dimension, radius, reaction):
        if not radius > 0:
            raise PreconditionError(f"radius must be positive, got {radius}")
        return cls(dimension=dimension, epsilon=1. / radius, reaction=reaction)

    @property
    def radius(self):
        return 1. / self.epsilon

    def with_epsilon(self, epsilon):
        return dataclasses.replace(self, epsilon=epsilon)


@dataclasses.dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    grading: str = "uniform"
    width: Optional[float] = None
    fraction: Optional[float] = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise PreconditionError("mesh needs at least two nodes")
        if nodes[0] != 0. or nodes[-1] != 1.:
            raise PreconditionError(f"mesh endpoints must be exactly 0 and 1, got {nodes[0]} and {nodes[-1]}")
        if not np.all(np.diff(nodes) > 0):
            raise PreconditionError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self):
        return len(self.nodes) - 1

    @property
    def steps(self):
        return np.diff(self.nodes)


def _geometric_ratio(h_min, m, width):
    # solves h_min (q^m - 1) / (q - 1) = width for s = q - 1
    def excess(s):
        return h_min * min(np.expm1(m * np.log1p(s)), 1e300) / s - width

    hi = 1.
    while excess(hi) < 0:
        hi *= 2.
    return 1. + brentq(excess, 1e-12, hi, xtol=1e-15, rtol=1e-14)


def build_mesh(epsilon, n, grading="layer", width=None, fraction=0.5, slope=1.):
    """
    Builds the discretization nodes of [0, 1].

    Parameters
    ----------
    epsilon: float
    n: int
        Number of cells, at least 32
    grading: str
        "uniform", "layer" (piecewise uniform, ceil(fraction * n) nodes in [1 - width, 1])
        or "geometric" (cells shrinking geometrically toward x = 1)
    width: float
        Width of the refined layer, min(1/2, 8 epsilon) by default
    fraction: float
        Share of the cells spent in the layer
    slope: float
        f'(|lambda|), only used by the geometric grading to size the smallest cell
        on the inner layer scale epsilon / sqrt(f'(|lambda|))

    Returns
    -------
    Mesh
    """
    if n < 32:
        raise PreconditionError(f"mesh needs n >= 32 cells, got {n}")
    if grading not in GRADINGS:
        raise PreconditionError(f"unknown grading {grading!r}, expected one of {GRADINGS}")
    n = int(n)
    if grading == "uniform":
        return Mesh(np.linspace(0., 1., n + 1), grading="uniform")

    if width is None:
        width = min(.5, 8. * epsilon)
    if not 0 < width < 1:
        raise PreconditionError(f"layer width must lie in (0, 1), got {width}")
    if not 0 < fraction < 1:
        raise PreconditionError(f"layer fraction must lie in (0, 1), got {fraction}")
    start = 1. - width
    m = int(math.ceil(fraction * n))
    m = min(max(m, 2), n - 1)

    if grading == "layer":
        # m nodes (m - 1 cells) in [1 - w, 1], the remaining n - m + 1 cells on [0, 1 - w]
        fine = np.linspace(start, 1., m)
        coarse = np.linspace(0., start, n - m + 2)
        return Mesh(np.concatenate([coarse[:-1], fine]), grading="layer", width=width, fraction=fraction)

    # geometric: m cells in [1 - w, 1], the smallest one touching x = 1
    h_min = max(epsilon / math.sqrt(max(1., slope)) / 4., MIN_CELL)
    if h_min * m >= width:
        cells = np.full(m, width / m)
    else:
        q = _geometric_ratio(h_min, m, width)
        cells = h_min * q ** np.arange(m)
    distances = np.concatenate([[0.], np.cumsum(cells)])
    distances = distances * (width / distances[-1])
    fine = (1. - distances)[::-1]
    fine[0] = start
    fine[-1] = 1.
    coarse = np.linspace(0., start, n - m + 1)
    return Mesh(np.concatenate([coarse[:-1], fine]), grading="geometric", width=width, fraction=fraction)


@dataclasses.dataclass(frozen=True)
class MeshSpec:
    """
    Mesh recipe resolved per (problem, lambda), since the layer width follows eps
    and the geometric grading follows f'(|lambda|).
    """
    n: int = 512
    grading: str = "layer"
    width: Optional[float] = None
    fraction: float = 0.5

    def __call__(self, problem, lam):
        slope = 1.
        if self.grading == "geometric":
            slope = float(problem.reaction.df(min(abs(lam), problem.reaction.overflow_guard)))
        return build_mesh(problem.epsilon, self.n, self.grading, width=self.width, fraction=self.fraction, slope=slope)


def resolve_mesh(mesh, problem, lam):
    if mesh is None:
        mesh = MeshSpec()
    if isinstance(mesh, Mesh):
        return mesh
    return mesh(problem, lam)


@dataclasses.dataclass(frozen=True, eq=False)
class DirichletSolution:
    """
    Converged nodal solution of the scaled Dirichlet problem.

    `values` holds U at the nodes and `fluxes` the box-scheme fluxes P = eps x^(N-1) U',
    so that `boundary_derivative` (eps U'(1)) is P at x = 1.
    """
    problem: Problem
    lam: float
    mesh: Mesh
    values: np.ndarray
    fluxes: np.ndarray
    boundary_derivative: float
    interior_residual_norm: float
    newton_iterations: int
    strategy: str = "newton"

    @property
    def derivative(self):
        """eps U'(x) at the nodes"""
        x = self.mesh.nodes
        if self.problem.dimension == 1:
            return np.array(self.fluxes)
        out = np.zeros_like(self.fluxes)
        out[1:] = self.fluxes[1:] / x[1:] ** (self.problem.dimension - 1)
        return out

    def to_frame(self):
        return pd.DataFrame({"x": self.mesh.nodes, "U": self.values, "dU": self.derivative})


class _NewtonFailure(Exception):
    def __init__(self, residual_norm, overflow=False):
        super().__init__(residual_norm)
        self.residual_norm = residual_norm
        self.overflow = overflow


class BoxSystem:
    """
    Box discretization of eps P' = x^(N-1) f(U), eps U' = P / x^(N-1), with P_0 = 0 and U_n = lambda.

    On the cell [x_i, x_{i+1}] with midpoint weight m_i = x_{i+1/2}^(N-1):

        eps (U_{i+1} - U_i) / h_i = (P_i + P_{i+1}) / (2 m_i)
        eps (P_{i+1} - P_i) / h_i = m_i (F(U_{i+1}) - F(U_i)) / (U_{i+1} - U_i)

    The divided difference of F makes the discrete energy balance exact.
    Residuals are normalized by the problem scales so that `tol` stays meaningful
    when f(lambda) is exponentially large.
    """

    def __init__(self, problem, mesh, lam):
        self.problem = problem
        self.reaction = problem.reaction
        self.epsilon = problem.epsilon
        self.lam = float(lam)
        x = mesh.nodes
        self.n = mesh.n
        self.h = np.diff(x)
        self.weights = ((x[1:] + x[:-1]) / 2.) ** (problem.dimension - 1)
        self.u_scale = 1. + abs(self.lam) + math.sqrt(2. * float(self.reaction.F(self.lam)))
        self.p_scale = 1. + abs(float(self.reaction.f(self.lam)))

        n = self.n
        cells = np.arange(n)
        u_idx = cells
        p_idx = n + 1 + cells
        rows_u = 1 + cells
        rows_p = 1 + n + cells
        eps, h, w = self.epsilon, self.h, self.weights
        self._linear_rows = np.concatenate([
            [0], rows_u, rows_u, rows_u, rows_u, rows_p, rows_p, [2 * n + 1],
        ])
        self._linear_cols = np.concatenate([
            [n + 1], u_idx, u_idx + 1, p_idx, p_idx + 1, p_idx, p_idx + 1, [n],
        ])
        self._linear_vals = np.concatenate([
            [1. / self.u_scale],
            -eps / h / self.u_scale, eps / h / self.u_scale,
            -0.5 / w / self.u_scale, -0.5 / w / self.u_scale,
            -eps / (h * w) / self.p_scale, eps / (h * w) / self.p_scale,
            [1. / self.u_scale],
        ])
        self._rows_p = rows_p
        self._u_idx = u_idx

    def residual(self, U, P):
        self.reaction.check_domain(U)
        eps, h, w = self.epsilon, self.h, self.weights
        res_u = (eps * np.diff(U) / h - (P[:-1] + P[1:]) / (2. * w)) / self.u_scale
        res_p = (eps * np.diff(P) / (h * w) - self.reaction.mean_slope(U[:-1], U[1:])) / self.p_scale
        return np.concatenate([[P[0] / self.u_scale], res_u, res_p, [(U[-1] - self.lam) / self.u_scale]])

    def jacobian(self, U, P):
        da, db = self.reaction.mean_slope_partials(U[:-1], U[1:])
        rows = np.concatenate([self._linear_rows, self._rows_p, self._rows_p])
        cols = np.concatenate([self._linear_cols, self._u_idx, self._u_idx + 1])
        vals = np.concatenate([self._linear_vals, -da / self.p_scale, -db / self.p_scale])
        size = 2 * (self.n + 1)
        return sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsc()


def _try_residual(system, U, P):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            res = system.residual(U, P)
    except DomainError:
        return None, True
    norm = float(np.max(np.abs(res)))
    if not math.isfinite(norm):
        return None, True
    return res, False


def _newton(system, U, P, tol, max_iter, max_halvings=30):
    """
    Damped Newton iteration: the step is halved (up to `max_halvings` times) until the
    residual max-norm decreases. Returns U, P, residual norm and iteration count.
    """
    U = np.array(U, dtype=float)
    P = np.array(P, dtype=float)
    U[-1] = system.lam
    P[0] = 0.
    res, overflow = _try_residual(system, U, P)
    if res is None:
        raise _NewtonFailure(float("inf"), overflow=True)
    norm = float(np.max(np.abs(res)))
    n1 = system.n + 1
    for iteration in range(1, max_iter + 1):
        # once below tol, one more step tightens the rows that the global scaling hides
        polishing = norm <= tol
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            step = spsolve(system.jacobian(U, P), -res)
        if not np.all(np.isfinite(step)):
            if polishing:
                return U, P, norm, iteration - 1
            raise _NewtonFailure(norm)
        t = 1.
        overflowed = False
        accepted = False
        for _ in range(max_halvings + 1):
            U_try = U + t * step[:n1]
            P_try = P + t * step[n1:]
            U_try[-1] = system.lam
            P_try[0] = 0.
            res_try, overflow = _try_residual(system, U_try, P_try)
            overflowed |= overflow
            if res_try is not None:
                norm_try = float(np.max(np.abs(res_try)))
                if norm_try < norm or (polishing and norm_try <= norm):
                    accepted = True
                    break
            t /= 2.
        if not accepted:
            if polishing:
                return U, P, norm, iteration - 1
            raise _NewtonFailure(norm, overflow=overflowed)
        U, P, res, norm = U_try, P_try, res_try, norm_try
        if polishing:
            return U, P, norm, iteration
    if norm <= tol:
        return U, P, norm, max_iter
    raise _NewtonFailure(norm)


def _epsilon_ladder(epsilon):
    rungs = []
    current = max(1., 10. * epsilon)
    while current > epsilon * (1. + 1e-12):
        rungs.append(current)
        current /= 2.
    rungs.append(epsilon)
    return rungs


def _lambda_ladder(lam, factor=1.25):
    start = min(abs(lam), .5)
    count = int(math.ceil(math.log(abs(lam) / start) / math.log(factor))) + 1 if abs(lam) > start else 1
    return list(math.copysign(1., lam) * np.geomspace(start, abs(lam), max(count, 1)))


def solve_dirichlet(problem, lam, mesh=None, tol=1e-10, max_iter=100):
    """
    Solves the scaled Dirichlet problem with U(1) = lam.

    Newton starts from the zero profile. If it fails, the same mesh is swept
    with a geometric eps ladder from max(1, 10 eps) down to eps (factor 2), and then
    with a ramp of the Dirichlet datum from a small value up to lam.

    Parameters
    ----------
    problem: Problem
    lam: float
    mesh: Mesh or MeshSpec
        A fixed mesh, or a recipe resolved for (problem, lam); a 512 cell layer mesh by default
    tol: float
        Max-norm tolerance on the normalized residual
    max_iter: int
        Newton iterations per attempt

    Returns
    -------
    DirichletSolution
    """
    if not tol > 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    lam = float(lam)
    if not math.isfinite(lam):
        raise DomainError(f"non-finite Dirichlet datum {lam}")
    if abs(lam) > problem.reaction.overflow_guard:
        raise DomainError(f"|lambda| = {abs(lam):g} exceeds the overflow guard {problem.reaction.overflow_guard:g} of {problem.reaction.registry_name}")
    mesh = resolve_mesh(mesh, problem, lam)

    n1 = mesh.n + 1
    if lam == 0.:
        zeros = np.zeros(n1)
        return DirichletSolution(problem, 0., mesh, zeros, zeros.copy(), 0., 0., 0, "trivial")

    def finish(U, P, norm, iterations, strategy):
        return DirichletSolution(
            problem=problem, lam=lam, mesh=mesh, values=U, fluxes=P,
            boundary_derivative=float(P[-1]), interior_residual_norm=norm,
            newton_iterations=iterations, strategy=strategy)

    zero = np.zeros(n1)
    failures = []
    try:
        return finish(*_newton(BoxSystem(problem, mesh, lam), zero, zero, tol, max_iter), "newton")
    except _NewtonFailure as failure:
        failures.append(failure)

    # eps continuation on the same mesh
    U, P, total = zero, zero, 0
    try:
        for epsilon in _epsilon_ladder(problem.epsilon):
            system = BoxSystem(problem.with_epsilon(epsilon), mesh, lam)
            U, P, norm, iterations = _newton(system, U, P, tol, max_iter)
            total += iterations
        return finish(U, P, norm, total, "epsilon-continuation")
    except _NewtonFailure as failure:
        failures.append(failure)

    # ramp of the Dirichlet datum
    U, P, total = zero, zero, 0
    try:
        for value in _lambda_ladder(lam):
            system = BoxSystem(problem, mesh, value)
            U, P, norm, iterations = _newton(system, U, P, tol, max_iter)
            total += iterations
        return finish(U, P, norm, total, "lambda-continuation")
    except _NewtonFailure as failure:
        failures.append(failure)

    if all(failure.overflow for failure in failures):
        raise DomainError(f"overflow of {problem.reaction.registry_name} during Newton iterations at lambda={lam:g}")
    residual_norm = min(failure.residual_norm for failure in failures)
    raise SolverError(
        f"Newton did not converge for N={problem.dimension}, eps={problem.epsilon:g}, lambda={lam:g} "
        f"(best residual {residual_norm:.3e} > tol {tol:g})", residual_norm=residual_norm)


def boundary_derivative(solution):
    """eps U'(1), second order accurate in the mesh size"""
    return solution.boundary_derivative


def first_integral_profile(solution):
    """
    eps^2 U'^2 / 2 - F(U) at every node, which is constant in x when N = 1.
    """
    if solution.problem.dimension != 1:
        raise PreconditionError("the first integral only exists for N = 1")
    return solution.fluxes ** 2 / 2. - solution.problem.reaction.F(solution.values)


@dataclasses.dataclass
class BoundReport:
    monotonicity_ok: bool
    box_ok: bool
    decay_ok: Optional[bool]
    strong_decay_ok: Optional[bool]
    max_monotonicity_violation: float
    max_box_violation: float
    max_decay_excess: Optional[float]
    max_envelope_ratio: Optional[float]
    epsilon_limit: Optional[float]
    binding_limit: Optional[str]
    M: float

    def to_dict(self):
        return dataclasses.asdict(self)


def verify_comparison(solution, M):
    """
    Checks the comparison bounds on a converged solution:
    - nodal monotonicity lambda (U_{i+1} - U_i) >= 0
    - box bounds min(0, lambda) <= U <= max(0, lambda)
    - decay |U(x)| <= 2 |lambda| exp(-M (1 - x) / (4 eps)) + 1e-9, only when
      eps < M / (sqrt(2) (N - 1)) for N >= 2

    The sharper envelope with exponent M / eps is reported as `strong_decay_ok`
    without being required.
    """
    lam = solution.lam
    if lam == 0.:
        raise PreconditionError("comparison bounds need lambda != 0")
    if not M > 0:
        raise PreconditionError(f"M must be positive, got {M}")
    problem = solution.problem
    U = np.asarray(solution.values)
    x = solution.mesh.nodes
    slack = 1e-10 * (1. + abs(lam))

    drops = -np.sign(lam) * np.diff(U)
    max_monotonicity_violation = float(max(np.max(drops), 0.))
    low, high = min(0., lam), max(0., lam)
    max_box_violation = float(max(np.max(low - U), np.max(U - high), 0.))

    epsilon = problem.epsilon
    epsilon_limit = None
    binding_limit = None
    if problem.dimension >= 2:
        # M / (sqrt(2)(N-1)) is always below sqrt(2) M / (N-1)
        epsilon_limit = M / (math.sqrt(2.) * (problem.dimension - 1))
        binding_limit = "M/(sqrt(2)(N-1))"
    decay_ok = strong_decay_ok = max_decay_excess = max_envelope_ratio = None
    if epsilon_limit is None or epsilon < epsilon_limit:
        envelope = 2. * abs(lam) * np.exp(-M * (1. - x) / (4. * epsilon)) + 1e-9
        excess = np.abs(U) - envelope
        max_decay_excess = float(np.max(excess))
        max_envelope_ratio = float(np.max(np.abs(U) / envelope))
        decay_ok = bool(max_decay_excess <= 0.)
        strong = 2. * abs(lam) * np.exp(-M * (1. - x) / epsilon) + 1e-9
        strong_decay_ok = bool(np.all(np.abs(U) <= strong))
    else:
        warnings.warn(f"decay envelope not checked: eps={epsilon:g} is outside eps < {epsilon_limit:g} ({binding_limit})")

    return BoundReport(
        monotonicity_ok=max_monotonicity_violation <= slack,
        box_ok=max_box_violation <= slack,
        decay_ok=decay_ok,
        strong_decay_ok=strong_decay_ok,
        max_monotonicity_violation=max_monotonicity_violation,
        max_box_violation=max_box_violation,
        max_decay_excess=max_decay_excess,
        max_envelope_ratio=max_envelope_ratio,
        epsilon_limit=epsilon_limit,
        binding_limit=binding_limit,
        M=float(M),
    )
