import dataclasses
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import quad

from neumannlab.base import DomainError, PreconditionError
from neumannlab.registry import register, get_instance, get_config

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
GL_NODES = (_GL_X + 1.) / 2.
GL_WEIGHTS = _GL_W / 2.

# below this relative spread the divided difference of F is replaced by a Gauss mean of f
CLOSE_SPREAD = 1e-3
EXP_OVERFLOW_GUARD = 700.


def stable_sinh(t):
    # expm1 keeps full relative precision near 0, and is exactly odd
    return 0.5 * (np.expm1(t) - np.expm1(-t))


def sinhc(y):
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-4
    safe = np.where(small, 1., y)
    return np.where(small, 1. + y * y / 6., stable_sinh(safe) / safe)


def _gauss_mean(fn, a, d, weights):
    if a.size == 0:
        return np.zeros(0)
    points = a[:, None] + d[:, None] * GL_NODES[None, :]
    return fn(points) @ weights


def parse_terms(text):
    """
    Parses a composite description such as "sinh@1;linear,c=2@0.5" into a list of
    {"family": ..., **params, "weight": ...} dicts.
    """
    terms = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        body, _, weight = chunk.partition("@")
        family, *params = [part.strip() for part in body.split(",")]
        term = {"family": family}
        for param in params:
            key, sep, value = param.partition("=")
            if not sep:
                raise ValueError(f"malformed term parameter {param!r} in {chunk!r}")
            term[key.strip()] = float(value)
        term["weight"] = float(weight) if weight else 1.
        terms.append(term)
    if not terms:
        raise ValueError("empty composite term list")
    return terms


class ReactionTerm:
    """
    Strictly increasing reaction f with f(0) = 0, its primitive F and derivative f'.

    Subclasses set
    - M: coercivity constant such that t f(t) >= M t^2 for all t, None if no positive one exists
    - theta0: Ambrosetti-Rabinowitz constant (t f(t) >= theta0 F(t) for |t| >> 1), None if unknown
    - overflow_guard: bound on |t| for which evaluations stay finite
    - odd: whether f is odd
    """
    M = None
    theta0 = None
    overflow_guard = np.inf
    odd = False

    def f(self, t):
        raise NotImplementedError()

    def df(self, t):
        raise NotImplementedError()

    def F(self, t):
        return self.primitive_by_quadrature(t)

    def primitive_by_quadrature(self, t):
        def one(s):
            return quad(lambda x: float(self.f(x)), 0., s, epsabs=1e-12, epsrel=1e-13, limit=200)[0]

        return np.vectorize(one, otypes=[float])(np.asarray(t, dtype=float))

    def check_domain(self, t):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise DomainError(f"{self.registry_name}: non-finite argument")
        if np.any(np.abs(t) > self.overflow_guard):
            raise DomainError(f"{self.registry_name}: |t| = {float(np.max(np.abs(t))):g} exceeds the overflow guard {self.overflow_guard:g}")
        return t

    def mean_slope(self, a, b):
        """
        Divided difference (F(b) - F(a)) / (b - a), i.e. the mean of f over [a, b],
        evaluated without cancellation when a and b are close.
        """
        a, b, shape = _flat_pair(a, b)
        d = b - a
        close = np.abs(d) <= CLOSE_SPREAD * (1. + np.abs(a) + np.abs(b))
        far = ~close
        out = np.empty(d.shape)
        out[far] = (self.F(b[far]) - self.F(a[far])) / d[far]
        out[close] = _gauss_mean(self.f, a[close], d[close], GL_WEIGHTS)
        return out.reshape(shape)

    def mean_slope_partials(self, a, b):
        """
        Partial derivatives of `mean_slope` with respect to a and b.
        """
        a, b, shape = _flat_pair(a, b)
        d = b - a
        close = np.abs(d) <= CLOSE_SPREAD * (1. + np.abs(a) + np.abs(b))
        far = ~close
        da = np.empty(d.shape)
        db = np.empty(d.shape)
        mean = self.mean_slope(a[far], b[far])
        da[far] = (mean - self.f(a[far])) / d[far]
        db[far] = (self.f(b[far]) - mean) / d[far]
        da[close] = _gauss_mean(self.df, a[close], d[close], GL_WEIGHTS * (1. - GL_NODES))
        db[close] = _gauss_mean(self.df, a[close], d[close], GL_WEIGHTS * GL_NODES)
        return da.reshape(shape), db.reshape(shape)

    def get_config(self):
        return get_config(self)

    def __repr__(self):
        config = self.get_config()
        return "{}({})".format(config.pop("family"), ", ".join(f"{k}={v!r}" for k, v in config.items()))


def _flat_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast(a, b).shape
    return np.broadcast_to(a, shape).ravel().copy(), np.broadcast_to(b, shape).ravel().copy(), shape


@register("linear", "reaction")
class LinearReaction(ReactionTerm):
    odd = True
    overflow_guard = 1e150

    def __init__(self, c=1.):
        if not c > 0:
            raise PreconditionError(f"linear reaction needs c > 0, got {c}")
        self.c = float(c)
        self.M = self.c
        self.theta0 = 2.

    def f(self, t):
        return self.c * np.asarray(t, dtype=float)

    def df(self, t):
        return np.full(np.shape(t), self.c)

    def F(self, t):
        t = np.asarray(t, dtype=float)
        return self.c * t * t / 2.

    def mean_slope(self, a, b):
        return self.c * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float)) / 2.


@register("sinh", "reaction")
class SinhReaction(ReactionTerm):
    odd = True
    M = 1.
    overflow_guard = EXP_OVERFLOW_GUARD

    def __init__(self):
        pass

    def f(self, t):
        return stable_sinh(np.asarray(t, dtype=float))

    def df(self, t):
        return 1. + self.F(t)

    def F(self, t):
        # cosh t - 1 = 2 sinh^2(t/2)
        half = stable_sinh(np.asarray(t, dtype=float) / 2.)
        return 2. * half * half

    def mean_slope(self, a, b):
        # (cosh b - cosh a) / (b - a) = sinh((a+b)/2) sinh((b-a)/2) / ((b-a)/2)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return stable_sinh((a + b) / 2.) * sinhc((b - a) / 2.)


@register("odd-power", "reaction")
class OddPowerReaction(ReactionTerm):
    """
    f(t) = |t|^(p-2) t, with primitive F(t) = |t|^p / p.
    """
    odd = True

    def __init__(self, p=3.):
        if not p > 1:
            raise PreconditionError(f"odd-power reaction needs p > 1, got {p}")
        self.p = float(p)
        self.M = 1. if self.p == 2. else None
        self.theta0 = self.p
        self.overflow_guard = 1e300 ** (1. / self.p)

    def f(self, t):
        t = np.asarray(t, dtype=float)
        return np.sign(t) * np.abs(t) ** (self.p - 1.)

    def df(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.p < 2.:
            t = np.maximum(t, 1e-300)
        return (self.p - 1.) * t ** (self.p - 2.)

    def F(self, t):
        return np.abs(np.asarray(t, dtype=float)) ** self.p / self.p


@register("composite", "reaction")
class CompositeReaction(ReactionTerm):
    """
    Positive combination sum_i w_i f_i of built-in reaction families.
    """

    def __init__(self, terms):
        self.terms = [dict(term) for term in terms]
        self.parts = []
        self.weights = []
        for term in self.terms:
            term = dict(term)
            weight = float(term.pop("weight", 1.))
            if term["family"] == "composite":
                raise PreconditionError("composite reactions cannot be nested")
            if not weight > 0:
                raise PreconditionError(f"composite reaction weights must be positive, got {weight}")
            self.parts.append(get_instance(term, "reaction"))
            self.weights.append(weight)
        if not self.parts:
            raise PreconditionError("composite reaction needs at least one term")
        known = [w * part.M for w, part in zip(self.weights, self.parts) if part.M is not None]
        self.M = float(sum(known)) if known else None
        thetas = [part.theta0 for part in self.parts]
        self.theta0 = min(thetas) if all(theta is not None for theta in thetas) else None
        self.overflow_guard = min(part.overflow_guard for part in self.parts)
        self.odd = all(part.odd for part in self.parts)

    def _sum(self, method, *args):
        return sum(w * getattr(part, method)(*args) for w, part in zip(self.weights, self.parts))

    def f(self, t):
        return self._sum("f", t)

    def df(self, t):
        return self._sum("df", t)

    def F(self, t):
        return self._sum("F", t)

    def mean_slope(self, a, b):
        return self._sum("mean_slope", a, b)

    def mean_slope_partials(self, a, b):
        partials = [part.mean_slope_partials(a, b) for part in self.parts]
        return (sum(w * da for w, (da, _) in zip(self.weights, partials)),
                sum(w * db for w, (_, db) in zip(self.weights, partials)))


class BoundaryFlux:
    overflow_guard = np.inf

    def g(self, t):
        raise NotImplementedError()

    def check_domain(self, t):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise DomainError(f"{self.registry_name}: non-finite argument")
        if np.any(np.abs(t) > self.overflow_guard):
            raise DomainError(f"{self.registry_name}: |t| = {float(np.max(np.abs(t))):g} exceeds the overflow guard {self.overflow_guard:g}")
        return t

    def get_config(self):
        return get_config(self)

    def __repr__(self):
        config = self.get_config()
        return "{}({})".format(config.pop("family"), ", ".join(f"{k}={v!r}" for k, v in config.items()))


@register("constant", "flux")
class ConstantFlux(BoundaryFlux):
    def __init__(self, c=1.):
        self.c = float(c)

    def g(self, t):
        return np.full(np.shape(t), self.c)


@register("linear-affine", "flux")
class AffineFlux(BoundaryFlux):
    overflow_guard = 1e150

    def __init__(self, a=1., b=0.):
        self.a = float(a)
        self.b = float(b)

    def g(self, t):
        return self.a * np.asarray(t, dtype=float) + self.b


@register("paper-sinh", "flux")
class PaperSinhFlux(BoundaryFlux):
    """
    g(t) = sigma (1 + 4 sinh(|t|/2)); with f = sinh, g^2 - 2F >= 1 everywhere.
    """
    overflow_guard = 2. * EXP_OVERFLOW_GUARD

    def __init__(self, sigma=1):
        if sigma not in (1, -1, 1., -1.):
            raise PreconditionError(f"paper-sinh flux needs sigma in {{+1, -1}}, got {sigma}")
        self.sigma = int(sigma)

    def g(self, t):
        return self.sigma * (1. + 4. * stable_sinh(np.abs(np.asarray(t, dtype=float)) / 2.))


@register("scaled-sqrt2F", "flux")
class ScaledSqrt2FFlux(BoundaryFlux):
    """
    g(t) = c sqrt(2 F(t) + delta^2), built on the problem's reaction term.
    """

    def __init__(self, c=1., delta=1., reaction=None):
        if reaction is None:
            raise PreconditionError("scaled-sqrt2F flux needs the reaction term")
        self.c = float(c)
        self.delta = float(delta)
        self.reaction = get_instance(reaction, "reaction")
        self.overflow_guard = self.reaction.overflow_guard

    def g(self, t):
        return self.c * np.sqrt(2. * self.reaction.F(t) + self.delta ** 2)


@register("composite", "flux")
class CompositeFlux(BoundaryFlux):
    def __init__(self, terms, reaction=None):
        self.terms = [dict(term) for term in terms]
        self.reaction = reaction
        self.parts = []
        self.weights = []
        for term in self.terms:
            term = dict(term)
            self.weights.append(float(term.pop("weight", 1.)))
            if term["family"] == "composite":
                raise PreconditionError("composite fluxes cannot be nested")
            if term["family"] == "scaled-sqrt2F":
                term["reaction"] = reaction
            self.parts.append(get_instance(term, "flux"))
        if not self.parts:
            raise PreconditionError("composite flux needs at least one term")
        self.overflow_guard = min(part.overflow_guard for part in self.parts)

    def g(self, t):
        return sum(w * part.g(t) for w, part in zip(self.weights, self.parts))


def eval_f(reaction, t):
    return float(reaction.f(reaction.check_domain(t)))


def eval_F(reaction, t):
    return float(reaction.F(reaction.check_domain(t)))


def eval_g(flux, t):
    return float(flux.g(flux.check_domain(t)))


def gap(reaction, flux, t):
    """g^2(t) - 2F(t)"""
    return flux.g(t) ** 2 - 2. * reaction.F(t)


@dataclasses.dataclass
class AssumptionReport:
    f_monotone: bool
    f_zero_at_zero: bool
    liminf_ratio_estimate: float
    AR_holds_on_tail: bool
    tail_T: float
    theta0: float
    gap_min: float
    gap_sign_changes: List[Tuple[float, float]]
    ratio_at_infinity_estimate: float
    ratio_at_minus_infinity_estimate: float
    g0_sign: int
    remark2_condition: Optional[str]
    g_decreasing: bool
    as_g_holds: bool
    t_max: float

    def to_dict(self):
        return dataclasses.asdict(self)


def _refine_crossing(fn, lo, hi, width):
    f_lo = fn(lo)
    for _ in range(200):
        if hi - lo <= width:
            break
        mid = (lo + hi) / 2.
        f_mid = fn(mid)
        if f_mid == 0.:
            return mid, mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return lo, hi


def check_assumptions(reaction, flux, t_max=50., n_points=2001, tail_T=None, crossing_width=1e-10, ratio_tolerance=0.05):
    """
    Samples the standing assumptions on a dense symmetric grid.

    Parameters
    ----------
    reaction: ReactionTerm
    flux: BoundaryFlux
    t_max: float
        Half width of the sampled interval (clamped to the overflow guards)
    n_points: int
        Number of grid points (t = 0 is always added)
    tail_T: float
        |t| >= tail_T is the tail on which t f(t) >= theta0 F(t) is tested,
        min(10, t_max / 2) by default
    crossing_width: float
        Bisection width of the refined g^2 - 2F sign changes
    ratio_tolerance: float
        g^2 / 2F at +-t_max is considered different from 1 beyond this margin

    Returns
    -------
    AssumptionReport
    """
    if tail_T is not None and not t_max > tail_T > 0:
        raise PreconditionError(f"need t_max > tail_T > 0, got t_max={t_max}, tail_T={tail_T}")
    if not t_max > 0:
        raise PreconditionError(f"need t_max > 0, got {t_max}")
    if n_points < 100:
        raise PreconditionError(f"need n_points >= 100, got {n_points}")
    t_max = float(min(t_max, reaction.overflow_guard, flux.overflow_guard))
    if tail_T is None:
        tail_T = min(10., t_max / 2.)
    if not t_max > tail_T:
        raise PreconditionError(f"overflow guard {t_max:g} leaves no tail beyond tail_T={tail_T}")

    grid = np.union1d(np.linspace(-t_max, t_max, int(n_points)), [0.])
    values = reaction.f(grid)
    f_monotone = bool(np.all(np.diff(values) > 0))
    f_zero_at_zero = float(reaction.f(0.)) == 0.

    small = np.logspace(-6, -1, 200)
    small = np.concatenate([-small[::-1], small])
    liminf_ratio = float(np.min(reaction.f(small) / small))

    tail = grid[np.abs(grid) >= tail_T]
    theta0 = float(np.min(tail * reaction.f(tail) / reaction.F(tail)))

    def h(t):
        return float(gap(reaction, flux, t))

    gaps = gap(reaction, flux, grid)
    crossings = [(float(t), float(t)) for t in grid[gaps == 0.]]
    signs = np.sign(gaps)
    for i in np.flatnonzero(signs[:-1] * signs[1:] < 0):
        crossings.append(tuple(map(float, _refine_crossing(h, grid[i], grid[i + 1], crossing_width))))
    crossings.sort()
    # a sign change of a continuous function means it vanishes somewhere
    gap_min = 0. if crossings else float(np.min(np.abs(gaps)))

    def ratio_at(t):
        return float(flux.g(t) ** 2 / (2. * reaction.F(t)))

    ratio_plus = ratio_at(t_max)
    ratio_minus = ratio_at(-t_max)

    # a decreasing g always meets sqrt(2F) or -sqrt(2F)
    g_values = flux.g(grid)
    g_decreasing = bool(np.all(np.diff(g_values) <= 0) and g_values[-1] < g_values[0])

    g0 = float(flux.g(0.))
    nonzero = grid[grid != 0.]
    normalized = flux.g(nonzero) / np.sqrt(2. * reaction.F(nonzero))
    remark2 = None
    if g0 > 0 and np.min(normalized) > 1:
        remark2 = "i"
    elif g0 < 0 and np.max(normalized) < -1:
        remark2 = "ii"

    as_g_holds = (not crossings and gap_min > 0
                  and abs(ratio_plus - 1.) > ratio_tolerance
                  and abs(ratio_minus - 1.) > ratio_tolerance)

    return AssumptionReport(
        f_monotone=f_monotone,
        f_zero_at_zero=f_zero_at_zero,
        liminf_ratio_estimate=liminf_ratio,
        AR_holds_on_tail=theta0 > 1.,
        tail_T=float(tail_T),
        theta0=theta0,
        gap_min=gap_min,
        gap_sign_changes=crossings,
        ratio_at_infinity_estimate=ratio_plus,
        ratio_at_minus_infinity_estimate=ratio_minus,
        g0_sign=int(np.sign(g0)),
        remark2_condition=remark2,
        g_decreasing=g_decreasing,
        as_g_holds=bool(as_g_holds),
        t_max=t_max,
    )
