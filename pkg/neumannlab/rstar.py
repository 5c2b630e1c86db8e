import dataclasses
import warnings
from typing import List, Optional, Tuple

import pandas as pd
from tqdm import tqdm

from neumannlab.base import DomainError, PreconditionError, SolverError
from neumannlab.mismatch import scan
from neumannlab.nonlinearity import check_assumptions
from neumannlab.solver import Problem

RSTAR_STATUSES = ("bracketed", "root_emerges", "no_root_anywhere", "root_persists_to_Rmax", "inconclusive")
DEFAULT_BISECT_FRACTION = 0.05


@dataclasses.dataclass
class RstarEstimate:
    """
    Window-relative threshold radius.

    For `bracketed`, roots exist at r_low and none at r_high; for `root_emerges`
    the transition goes the other way (none at r_low, roots at r_high).
    """
    r_low: Optional[float]
    r_high: Optional[float]
    iterations: int
    scan_window: Tuple[float, float]
    status: str
    direction: Optional[str] = None
    roots_at_r_low: List[float] = dataclasses.field(default_factory=list)
    roots_at_r_high: List[float] = dataclasses.field(default_factory=list)
    as_g_holds: Optional[bool] = None
    bisect_tol: Optional[float] = None

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TraceRow:
    R: float
    n_roots: Optional[int]
    roots: List[float]
    inconclusive: bool = False
    error: Optional[str] = None


def trace_frame(rows):
    return pd.DataFrame({
        "R": [row.R for row in rows],
        "n_roots": pd.array([row.n_roots for row in rows], dtype="Int64"),
        "roots": [";".join("%.17g" % root for root in row.roots) for row in rows],
    }, columns=["R", "n_roots", "roots"])


class _Scanner:
    def __init__(self, reaction, flux, dimension, scan_window, n_samples, mesh, tol, refine_tol, workers):
        lo, hi = scan_window
        if not lo < hi:
            raise PreconditionError(f"scan window must satisfy lo < hi, got {scan_window}")
        self.reaction = reaction
        self.flux = flux
        self.dimension = dimension
        self.scan_window = (float(lo), float(hi))
        self.kwargs = dict(n_samples=n_samples, mesh=mesh, tol=tol, refine_tol=refine_tol, workers=workers)
        self.count = 0

    def __call__(self, radius):
        self.count += 1
        problem = Problem.from_radius(self.dimension, radius, self.reaction)
        return scan(problem, self.flux, *self.scan_window, **self.kwargs)


def _single_transition(presence):
    changes = sum(a != b for a, b in zip(presence[:-1], presence[1:]))
    return changes <= 1


def root_trace(reaction, flux, r_ladder, scan_window=(-10., 10.), dimension=2, n_samples=201, mesh=None,
               tol=1e-10, refine_tol=1e-8, workers=1, progress=False, _scanner=None):
    """
    One mismatch scan per radius of an increasing ladder.

    Returns
    -------
    list of TraceRow
        in ladder order; rungs whose scan failed have n_roots None and carry the error
    """
    r_ladder = [float(r) for r in r_ladder]
    if not r_ladder:
        raise PreconditionError("empty R ladder")
    if any(r <= 0 for r in r_ladder) or any(b <= a for a, b in zip(r_ladder[:-1], r_ladder[1:])):
        raise PreconditionError(f"R ladder must be positive and strictly increasing, got {r_ladder}")
    scanner = _scanner or _Scanner(reaction, flux, dimension, scan_window, n_samples, mesh, tol, refine_tol, workers)
    rows = []
    for radius in tqdm(r_ladder, desc="trace", disable=not progress, leave=False):
        try:
            curve = scanner(radius)
        except (SolverError, DomainError) as e:
            warnings.warn(f"trace rung R={radius:g} failed: {e}")
            rows.append(TraceRow(R=radius, n_roots=None, roots=[], error=str(e)))
            continue
        rows.append(TraceRow(R=radius, n_roots=len(curve.roots), roots=[root.lam for root in curve.roots],
                             inconclusive=bool(curve.inconclusive_flags)))
    presence = [row.n_roots > 0 for row in rows if row.n_roots is not None]
    if not _single_transition(presence):
        warnings.warn("root presence along the R ladder changes more than once")
    return rows


def estimate_rstar(reaction, flux, scan_window=(-10., 10.), r_min=0.5, r_max=20., bisect_tol=None, dimension=2,
                   n_samples=201, mesh=None, tol=1e-10, refine_tol=1e-8, trace_ladder=None, check=True,
                   workers=1, progress=False):
    """
    Brackets the radius at which the mismatch map stops having roots on a fixed lambda window.

    Scans are run at r_min and r_max; if root presence differs, the radius is bisected until the
    bracket is at most `bisect_tol` wide (5% of the current r_low by default). Any inconclusive
    scan, or a trace ladder on which presence changes more than once, gives status `inconclusive`.

    Parameters
    ----------
    reaction: ReactionTerm
    flux: BoundaryFlux
    scan_window: (float, float)
    r_min: float
    r_max: float
    bisect_tol: float
    dimension: int
    n_samples: int
        Samples of every lambda scan
    mesh: Mesh or MeshSpec
    tol: float
    refine_tol: float
    trace_ladder: list of float
        Optional radii scanned beforehand to detect non-monotone presence
    check: bool
        Check g^2 != 2F first and warn when it fails
    workers: int
    progress: bool

    Returns
    -------
    RstarEstimate
    """
    if not 0 < r_min < r_max:
        raise PreconditionError(f"need 0 < r_min < r_max, got r_min={r_min}, r_max={r_max}")
    if bisect_tol is not None and not bisect_tol > 0:
        raise PreconditionError(f"bisect_tol must be positive, got {bisect_tol}")
    scanner = _Scanner(reaction, flux, dimension, scan_window, n_samples, mesh, tol, refine_tol, workers)
    window = scanner.scan_window

    as_g_holds = None
    if check:
        try:
            as_g_holds = check_assumptions(reaction, flux).as_g_holds
        except PreconditionError as e:
            warnings.warn(f"assumption check skipped: {e}")
        if as_g_holds is False:
            warnings.warn("g^2 - 2F vanishes somewhere: the threshold radius is not guaranteed to exist")

    def result(status, r_low=None, r_high=None, direction=None, low_roots=(), high_roots=(), used_tol=None):
        return RstarEstimate(
            r_low=r_low, r_high=r_high, iterations=scanner.count, scan_window=window, status=status,
            direction=direction, roots_at_r_low=list(low_roots), roots_at_r_high=list(high_roots),
            as_g_holds=as_g_holds, bisect_tol=used_tol)

    if trace_ladder is not None:
        rows = root_trace(reaction, flux, trace_ladder, _scanner=scanner, progress=progress)
        presence = [row.n_roots > 0 for row in rows if row.n_roots is not None]
        if any(row.inconclusive for row in rows) or not _single_transition(presence):
            return result("inconclusive")

    def probe(radius):
        curve = scanner(radius)
        return len(curve.roots) > 0, [root.lam for root in curve.roots], bool(curve.inconclusive_flags)

    low_present, low_roots, low_flag = probe(r_min)
    high_present, high_roots, high_flag = probe(r_max)
    if low_flag or high_flag:
        return result("inconclusive", r_min, r_max)
    if low_present and high_present:
        return result("root_persists_to_Rmax", r_low=r_max, low_roots=high_roots)
    if not low_present and not high_present:
        return result("no_root_anywhere", r_high=r_min)

    status = "bracketed" if low_present else "root_emerges"
    direction = "presence_to_absence" if low_present else "absence_to_presence"
    lo, hi = r_min, r_max
    while True:
        width = bisect_tol if bisect_tol is not None else DEFAULT_BISECT_FRACTION * lo
        if hi - lo <= width:
            break
        mid = (lo + hi) / 2.
        present, roots, flag = probe(mid)
        if flag:
            return result("inconclusive", lo, hi, direction, low_roots, high_roots, width)
        if present == low_present:
            lo, low_roots = mid, roots
        else:
            hi, high_roots = mid, roots
    return result(status, lo, hi, direction, low_roots, high_roots, width)
