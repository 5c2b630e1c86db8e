import dataclasses
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from neumannlab.base import DomainError, PreconditionError, SolverError
from neumannlab.solver import solve_dirichlet

PHI_SIGN_PATTERNS = ("all_positive", "all_negative", "mixed")


@dataclasses.dataclass(frozen=True)
class MismatchSample:
    lam: float
    eps_dU1: float
    g_lambda: float
    phi: float

    def to_dict(self):
        return {"lambda": self.lam, "eps_dU1": self.eps_dU1, "g_lambda": self.g_lambda, "phi": self.phi}


@dataclasses.dataclass(frozen=True)
class MismatchRoot:
    lam: float
    bracket_lo: float
    bracket_hi: float
    phi_residual: float
    exact: bool = False

    def to_dict(self):
        return {"lambda": self.lam, "bracket_lo": self.bracket_lo, "bracket_hi": self.bracket_hi, "phi_residual": self.phi_residual}


@dataclasses.dataclass
class ExistenceReport:
    n_roots: int
    roots: List[MismatchRoot]
    min_abs_phi: float
    phi_sign_pattern: str
    inconclusive_flags: List[float]
    scanned_interval: Tuple[float, float]

    def to_dict(self):
        return {
            "n_roots": self.n_roots,
            "roots": [root.to_dict() for root in self.roots],
            "min_abs_phi": self.min_abs_phi,
            "phi_sign_pattern": self.phi_sign_pattern,
            "inconclusive_flags": list(self.inconclusive_flags),
            "scanned_interval": list(self.scanned_interval),
        }


@dataclasses.dataclass
class MismatchCurve:
    """
    Samples of Phi(lambda) = eps U'(1) - g(lambda) on a lambda grid, and the located roots.
    Samples whose Dirichlet solve failed are kept out of `samples` and listed in `failed`.
    """
    problem: object
    flux: object
    samples: List[MismatchSample]
    scanned_interval: Tuple[float, float]
    mesh: object = None
    tol: float = 1e-10
    roots: List[MismatchRoot] = dataclasses.field(default_factory=list)
    inconclusive_flags: List[float] = dataclasses.field(default_factory=list)
    failed: List[Tuple[float, str]] = dataclasses.field(default_factory=list)

    @property
    def n_failed(self):
        return len(self.failed)

    def to_frame(self):
        return pd.DataFrame([sample.to_dict() for sample in self.samples], columns=["lambda", "eps_dU1", "g_lambda", "phi"])

    def report(self):
        phis = np.array([sample.phi for sample in self.samples])
        if self.roots:
            pattern = "mixed"
        elif np.all(phis > 0):
            pattern = "all_positive"
        else:
            pattern = "all_negative"
        return ExistenceReport(
            n_roots=len(self.roots),
            roots=list(self.roots),
            min_abs_phi=float(np.min(np.abs(phis))),
            phi_sign_pattern=pattern,
            inconclusive_flags=list(self.inconclusive_flags),
            scanned_interval=tuple(self.scanned_interval),
        )


def mismatch(problem, flux, lam, mesh=None, tol=1e-10):
    """
    Phi(lambda) = eps U'(1) - g(lambda) from one Dirichlet solve with U(1) = lambda.
    """
    g_lambda = float(flux.g(flux.check_domain(lam)))
    solution = solve_dirichlet(problem, lam, mesh=mesh, tol=tol)
    eps_dU1 = solution.boundary_derivative
    return MismatchSample(lam=float(lam), eps_dU1=eps_dU1, g_lambda=g_lambda, phi=eps_dU1 - g_lambda)


def scan(problem, flux, lambda_min=-10., lambda_max=10., n_samples=201, mesh=None, tol=1e-10,
         refine_tol=1e-8, workers=1, progress=False):
    """
    Samples Phi on an affine lambda grid (endpoints included) and locates its roots.

    Parameters
    ----------
    problem: Problem
    flux: BoundaryFlux
    lambda_min: float
    lambda_max: float
    n_samples: int
    mesh: Mesh or MeshSpec
    tol: float
        Newton tolerance of every Dirichlet solve
    refine_tol: float
        Bracket width at which root bisection stops
    workers: int
        Number of threads evaluating samples, results are reduced in grid order
    progress: bool

    Returns
    -------
    MismatchCurve
    """
    if not lambda_min < lambda_max:
        raise PreconditionError(f"need lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]")
    if n_samples < 3:
        raise PreconditionError(f"need at least 3 samples, got {n_samples}")
    lambdas = np.linspace(lambda_min, lambda_max, int(n_samples))

    def evaluate(lam):
        try:
            return mismatch(problem, flux, lam, mesh=mesh, tol=tol), None
        except (SolverError, DomainError) as e:
            return None, str(e)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(tqdm(executor.map(evaluate, lambdas), total=len(lambdas), desc="scan", disable=not progress, leave=False))
    else:
        results = [evaluate(lam) for lam in tqdm(lambdas, desc="scan", disable=not progress, leave=False)]

    samples = []
    failed = []
    for lam, (sample, error) in zip(lambdas, results):
        if sample is None:
            failed.append((float(lam), error))
        else:
            samples.append(sample)
    if failed:
        warnings.warn(f"{len(failed)} of {len(lambdas)} mismatch samples failed and were excluded (first: lambda={failed[0][0]:g}: {failed[0][1]})")
    if len(samples) < 2:
        raise SolverError(f"only {len(samples)} mismatch sample(s) converged on [{lambda_min}, {lambda_max}]")

    curve = MismatchCurve(
        problem=problem,
        flux=flux,
        samples=samples,
        scanned_interval=(float(lambda_min), float(lambda_max)),
        mesh=mesh,
        tol=tol,
        failed=failed,
    )
    return find_roots(curve, refine_tol)


def find_roots(curve, refine_tol=1e-8):
    """
    Refines every sign change of Phi on the curve by bisection in lambda (each
    evaluation is a fresh Dirichlet solve) until the bracket is at most `refine_tol`
    wide. Samples where Phi is exactly 0 are exact roots; samples with
    |Phi| < 10 tol and no sign change around them are flagged as inconclusive.
    """
    if len(curve.samples) < 2:
        raise PreconditionError("root finding needs at least 2 valid samples")
    if not refine_tol > 0:
        raise PreconditionError(f"refine_tol must be positive, got {refine_tol}")
    samples = curve.samples
    phis = np.array([sample.phi for sample in samples])
    signs = np.sign(phis)

    def phi_at(lam):
        return mismatch(curve.problem, curve.flux, lam, mesh=curve.mesh, tol=curve.tol).phi

    roots = []
    for sample in samples:
        if sample.phi == 0.:
            roots.append(MismatchRoot(lam=sample.lam, bracket_lo=sample.lam, bracket_hi=sample.lam, phi_residual=0., exact=True))

    for left, right in zip(samples[:-1], samples[1:]):
        if np.sign(left.phi) * np.sign(right.phi) >= 0:
            continue
        lo, hi = left.lam, right.lam
        phi_lo = left.phi
        while hi - lo > refine_tol:
            mid = (lo + hi) / 2.
            if mid <= lo or mid >= hi:
                break
            phi_mid = phi_at(mid)
            if phi_mid == 0.:
                lo = hi = mid
                break
            if np.sign(phi_mid) == np.sign(phi_lo):
                lo, phi_lo = mid, phi_mid
            else:
                hi = mid
        center = (lo + hi) / 2.
        roots.append(MismatchRoot(lam=center, bracket_lo=lo, bracket_hi=hi, phi_residual=phi_at(center)))
    roots.sort(key=lambda root: root.lam)

    inconclusive = []
    threshold = 10. * curve.tol
    for i, sample in enumerate(samples):
        if sample.phi == 0. or abs(sample.phi) >= threshold:
            continue
        neighbors = signs[max(i - 1, 0):i + 2]
        if np.all(neighbors == signs[i]):
            inconclusive.append(sample.lam)

    curve.roots = roots
    curve.inconclusive_flags = inconclusive
    return curve
