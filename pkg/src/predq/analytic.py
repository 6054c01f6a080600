"""Numerical mean-response analysis for prediction-based M/G/1 scheduling.

Every policy here is a rank policy whose per-class response time follows the
tagged-job template

    E[T] = lam * (E[X0^2] + E[X1^2]) / (2 * (1 - lam*E[X0]) * (1 - lam*Xnew(0)))
         + integral_0^req da / (1 - lam * Xnew(a))

where X0 is the relevant-at-arrival work per old job, X1 the recycled work of
old jobs that re-enter below the tagged job's rank, and Xnew(a) the expected
work a later arrival performs before the tagged job (at age a) finishes.  The
building blocks are moments of the service distribution restricted by the
cheap bit, the probation cutoff, or the expensive prediction, all expressed
through the conditional prediction law H(q|x) = P(prediction < q | size x).

MomentCatalog computes those blocks: scalars once, q-indexed families either
exactly (fresh quadrature per call, memoize=False) or on a shared geometric
grid interpolated with a monotone cubic (memoize=True, the default).  The
grid route also yields the residence integral in closed form through the
interpolant's antiderivative, which is what makes whole-class means cheap
enough to sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .distributions import (
    ExponentialPredictor,
    PerfectPredictor,
    PredictionModel,
    UniformPredictor,
)
from .policy import (
    FCFS,
    OneBit,
    SPRPT,
    SkipPredict,
    DelayPredict,
    External,
    ServerTime,
)
from .simulator import InstabilityError, expected_requirement

_DENOM_FLOOR = 1e-9
_EMPTY_CLASS = 1e-12


class NonConvergenceError(RuntimeError):
    """Quadrature failed to reach tolerance; carries the partial estimate."""

    def __init__(self, msg, estimate=math.nan, error=math.inf):
        super().__init__(msg)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-7
    abs_tol: float = 1e-10
    max_depth: int = 200
    memoize: bool = True
    grid_points: int = 800
    tail_eps: float = 1e-10
    prediction_nodes: int = 64


_DEFAULT_CFG = QuadratureConfig()


def integrate(fn, lo, hi, cfg=None, points=None):
    """Adaptive quadrature of fn on [lo, hi].

    hi may be math.inf, in which case the integral is folded onto [lo/(1+lo), 1)
    by the substitution t = x/(1+x).  points lists interior locations where the
    integrand kinks or jumps.  Raises NonConvergenceError (with the partial
    estimate attached) when the error estimate stays above tolerance.
    """
    cfg = cfg or _DEFAULT_CFG
    if hi <= lo:
        return 0.0
    if math.isinf(hi):
        def mapped(t):
            x = t / (1.0 - t)
            return fn(x) / ((1.0 - t) * (1.0 - t))

        a = lo / (1.0 + lo)
        pts = [p / (1.0 + p) for p in points or () if p > lo]
        return _quad_checked(mapped, a, 1.0, cfg, pts)
    pts = [p for p in points or () if lo < p < hi]
    return _quad_checked(fn, lo, hi, cfg, pts)


def _quad_checked(fn, a, b, cfg, pts):
    res = quad(
        fn,
        a,
        b,
        epsabs=cfg.abs_tol,
        epsrel=cfg.rel_tol,
        limit=cfg.max_depth,
        points=sorted(set(pts)) or None,
        full_output=1,
    )
    val, err = res[0], res[1]
    if len(res) > 3 and err > 10.0 * max(cfg.abs_tol, abs(val) * cfg.rel_tol):
        raise NonConvergenceError(str(res[3]), estimate=val, error=err)
    return val


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_unit(n):
    """Gauss-Legendre nodes and weights on (0, 1)."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = ((x + 1.0) / 2.0, w / 2.0)
    return _GL_CACHE[n]


class _GridFn:
    """Monotone cubic interpolant on [0, q_max], clamped flat outside."""

    def __init__(self, qs, vals):
        self.qs = qs
        self.vals = vals
        self.q_max = qs[-1]
        self._pchip = PchipInterpolator(qs, vals, extrapolate=False)

    def __call__(self, q):
        q = np.clip(q, 0.0, self.q_max)
        out = self._pchip(q)
        return float(out) if np.ndim(out) == 0 else out


class _Residence:
    """Closed-form residence integrals for one load profile at one lam.

    Wraps g(q) = 1/(1 - lam*load(q)) and its antiderivative Phi so that
    integral_0^span du / (1 - lam*load((r-u)+)) = Phi(r) - Phi((r-span)+)
    plus a flat piece below rank zero.
    """

    def __init__(self, qs, load_vals, lam):
        den = 1.0 - lam * np.asarray(load_vals)
        if den.min() < _DENOM_FLOOR:
            raise InstabilityError(
                f"rank-level load reaches {lam * float(np.max(load_vals)):.6f}"
            )
        g = 1.0 / den
        self.q_max = qs[-1]
        self._g = PchipInterpolator(qs, g, extrapolate=False)
        self._anti = self._g.antiderivative()
        self._g0 = float(g[0])
        self._g_hi = float(g[-1])
        self._anti_hi = float(self._anti(self.q_max))

    def g(self, q):
        q = np.clip(q, 0.0, self.q_max)
        out = self._g(q)
        return float(out) if np.ndim(out) == 0 else out

    def _phi(self, q):
        base = self._anti(np.minimum(q, self.q_max))
        extra = np.maximum(q - self.q_max, 0.0) * self._g_hi
        return base + extra

    def integral(self, r, span):
        """integral_0^span du / (1 - lam*load((r-u)+)) for scalar or array r."""
        if span <= 0.0:
            return 0.0 if np.ndim(r) == 0 else np.zeros(np.shape(r))
        r = np.maximum(r, 0.0)
        lo = np.maximum(r - span, 0.0)
        out = self._phi(r) - self._phi(lo) + np.maximum(span - r, 0.0) * self._g0
        return float(out) if np.ndim(out) == 0 else out


def _tail_cut(dist, eps):
    """Smallest x with sf(x) <= eps, by doubling plus bisection."""
    hi = max(dist.mean, 1.0)
    while dist.sf(hi) > eps:
        hi *= 2.0
        if hi > 1e12:
            break
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if dist.sf(mid) > eps:
            lo = mid
        else:
            hi = mid
    return hi


class MomentCatalog:
    """Prediction-weighted service moments for one (service, predictor) pair.

    All quantities are lam-free, so one catalog serves a whole arrival-rate
    sweep.  Scalars are cached on first use.  The q-indexed families (loads
    below a rank level, tail weights, recycled squares) are either evaluated
    fresh per call (cfg.memoize False) or tabulated once on a shared geometric
    grid and interpolated (default).  breakpoints lists known kink locations
    (a probation limit, for instance) to pin into the grid and the outer
    quadratures.
    """

    def __init__(self, dist, pm: PredictionModel, cfg: QuadratureConfig | None = None,
                 breakpoints: tuple = ()):
        self.dist = dist
        self.pm = pm
        self.cfg = cfg or _DEFAULT_CFG
        self._scalars: dict = {}
        self._grids: dict = {}
        self._resid: dict = {}
        self._extra_breaks = tuple(float(b) for b in breakpoints if b > 0.0)
        self._x_hi = _tail_cut(dist, self.cfg.tail_eps)
        self._qs = None

    # ----- breakpoints ------------------------------------------------

    def _weight_points(self):
        """x locations where the cheap-bit weight p(x) jumps or kinks."""
        pm = self.pm
        T = pm.threshold
        pts = list(self._extra_breaks)
        if T > 0.0:
            if isinstance(pm.cheap, PerfectPredictor):
                pts.append(T)
            elif isinstance(pm.cheap, UniformPredictor):
                a = pm.cheap.alpha
                pts += [T / (1.0 + a), T / (1.0 - a)]
        return pts

    def _h_points(self, q):
        """x locations where H(q|x) kinks, for the outer integrals."""
        if q <= 0.0:
            return []
        exp = self.pm.expensive
        if isinstance(exp, PerfectPredictor):
            return [q]
        if isinstance(exp, UniformPredictor):
            a = exp.alpha
            return [q / (1.0 + a), q / (1.0 - a)]
        return []

    def _q_max(self):
        exp = self.pm.expensive
        if isinstance(exp, PerfectPredictor):
            return self._x_hi
        if isinstance(exp, UniformPredictor):
            return (1.0 + exp.alpha) * self._x_hi
        # heavy safety margin for unbounded prediction noise
        return self._x_hi * math.log(1.0 / self.cfg.tail_eps)

    def _qgrid(self):
        if self._qs is None:
            n = self.cfg.grid_points
            q_max = self._q_max()
            q_lo = max(self.dist.mean * 1e-7, 1e-12)
            qs = np.geomspace(q_lo, q_max, n - 1)
            marks = [self.pm.threshold] + list(self._extra_breaks)
            marks = [m for m in marks if 0.0 < m < q_max]
            qs = np.union1d(np.concatenate(([0.0], qs)), np.asarray(marks))
            self._qs = qs
        return self._qs

    # ----- scalars ----------------------------------------------------

    def _scalar(self, key, fn, lo=0.0, hi=math.inf, points=None):
        if key not in self._scalars:
            self._scalars[key] = integrate(fn, lo, hi, self.cfg, points)
        return self._scalars[key]

    def z(self):
        """Probability a job is predicted long by the cheap bit."""
        if "z" not in self._scalars:
            self._scalars["z"] = self.pm.long_fraction()
        return self._scalars["z"]

    def zshort(self):
        return 1.0 - self.z()

    def charge(self, c1, c2):
        """Expected external prediction spend per job when the expensive
        prediction is bought only for cheap-flagged-long jobs: c1 + c2 * z."""
        return c1 + c2 * self.z()

    def _p(self, x):
        return self.pm.cheap_predict_prob(x)

    def s1_short(self):
        f, p = self.dist.pdf, self._p
        return self._scalar("s1_short", lambda x: x * f(x) * p(x),
                            points=self._weight_points())

    def s2_short(self):
        f, p = self.dist.pdf, self._p
        return self._scalar("s2_short", lambda x: x * x * f(x) * p(x),
                            points=self._weight_points())

    def s1_long_all(self):
        f, p = self.dist.pdf, self._p
        return self._scalar("s1_long_all", lambda x: x * f(x) * (1.0 - p(x)),
                            points=self._weight_points())

    def s2_long_all(self):
        f, p = self.dist.pdf, self._p
        return self._scalar("s2_long_all", lambda x: x * x * f(x) * (1.0 - p(x)),
                            points=self._weight_points())

    def short1(self, L):
        f = self.dist.pdf
        return self._scalar(("short1", L), lambda x: x * f(x), 0.0, L)

    def short2(self, L):
        f = self.dist.pdf
        return self._scalar(("short2", L), lambda x: x * x * f(x), 0.0, L)

    # ----- q-indexed families ------------------------------------------

    def _H(self, x, q):
        return self.pm.conditional_cdf(x, q)

    def _below_point(self, q, w, x_lo):
        """integral of w(x)*H(q|x) over x > x_lo (prediction below rank q)."""
        if q <= 0.0:
            return 0.0
        if self.pm.expensive_is_point_mass:
            if q <= x_lo:
                return 0.0
            return integrate(w, x_lo, q, self.cfg, self._weight_points())
        fn = lambda x: w(x) * self._H(x, q)
        return integrate(fn, x_lo, math.inf, self.cfg,
                         self._weight_points() + self._h_points(q))

    def _above_point(self, q, w, x_lo):
        """integral of w(x)*(1-H(q|x)) over x > x_lo (prediction at/above q)."""
        if self.pm.expensive_is_point_mass:
            return integrate(w, max(q, x_lo), math.inf, self.cfg,
                             self._weight_points())
        if q <= 0.0:
            return integrate(w, x_lo, math.inf, self.cfg, self._weight_points())
        fn = lambda x: w(x) * (1.0 - self._H(x, q))
        return integrate(fn, x_lo, math.inf, self.cfg,
                         self._weight_points() + self._h_points(q))

    def _rec_inner(self, x, q, m):
        """integral_0^m h(q+u|x) * (m-u)^2 du for one size x."""
        if m <= 0.0:
            return 0.0
        exp = self.pm.expensive
        if isinstance(exp, ExponentialPredictor):
            em = math.exp(-m / x)
            return math.exp(-q / x) * (m * m - 2.0 * m * x + 2.0 * x * x * (1.0 - em))
        if isinstance(exp, UniformPredictor):
            a = exp.alpha
            lo, hi = (1.0 - a) * x, (1.0 + a) * x
            u1 = max(0.0, lo - q)
            u2 = min(m, hi - q)
            if u2 <= u1:
                return 0.0
            return ((m - u1) ** 3 - (m - u2) ** 3) / (6.0 * a * x)
        pdf = self.pm.conditional_pdf
        fn = lambda u: pdf(x, q + u) * (m - u) * (m - u)
        return _quad_checked(fn, 0.0, m, self.cfg, [])

    def _rec_point(self, q, w, offset, x_lo):
        """Recycled squared work of jobs whose prediction lands above rank q."""
        if self.pm.expensive_is_point_mass:
            if q < offset:
                return 0.0
            tail = integrate(w, max(q, x_lo), math.inf, self.cfg,
                             self._weight_points())
            return (q - offset) ** 2 * tail
        fn = lambda x: w(x) * self._rec_inner(x, q, x - offset)
        return integrate(fn, x_lo, math.inf, self.cfg,
                         self._weight_points() + self._h_points(q))

    def _family(self, key, point_fn, q):
        if not self.cfg.memoize:
            if np.ndim(q) == 0:
                return point_fn(float(q))
            return np.array([point_fn(float(t)) for t in np.asarray(q).ravel()]
                            ).reshape(np.shape(q))
        if key not in self._grids:
            qs = self._qgrid()
            vals = np.array([point_fn(float(t)) for t in qs])
            self._grids[key] = _GridFn(qs, vals)
        return self._grids[key](q)

    def _grid_vals(self, key, point_fn):
        """Raw grid values (memoized mode only), for load assembly."""
        self._family(key, point_fn, 0.0)
        return self._grids[key].vals

    # weight helpers
    def _w_long1(self, x):
        return x * self.dist.pdf(x) * (1.0 - self._p(x))

    def _w_long2(self, x):
        return x * x * self.dist.pdf(x) * (1.0 - self._p(x))

    def _w_long0(self, x):
        return self.dist.pdf(x) * (1.0 - self._p(x))

    def _w_all1(self, x):
        return x * self.dist.pdf(x)

    def _w_all2(self, x):
        return x * x * self.dist.pdf(x)

    def _w_all0(self, x):
        return self.dist.pdf(x)

    def s1_long(self, q):
        return self._family("s1_long", lambda t: self._below_point(t, self._w_long1, 0.0), q)

    def s2_long(self, q):
        return self._family("s2_long", lambda t: self._below_point(t, self._w_long2, 0.0), q)

    def q_long(self, q):
        """Tail weight of predicted-long jobs whose prediction is >= q."""
        return self._family("q_long", lambda t: self._above_point(t, self._w_long0, 0.0), q)

    def s1_all(self, q):
        return self._family("s1_all", lambda t: self._below_point(t, self._w_all1, 0.0), q)

    def s2_all(self, q):
        return self._family("s2_all", lambda t: self._below_point(t, self._w_all2, 0.0), q)

    def q_all(self, q):
        return self._family("q_all", lambda t: self._above_point(t, self._w_all0, 0.0), q)

    def d1(self, q, L):
        return self._family(("d1", L), lambda t: self._below_point(t, self._w_all1, L), q)

    def d2(self, q, L):
        return self._family(("d2", L), lambda t: self._below_point(t, self._w_all2, L), q)

    def qd(self, q, L):
        return self._family(("qd", L), lambda t: self._above_point(t, self._w_all0, L), q)

    def rec_long(self, q):
        return self._family("rec_long", lambda t: self._rec_point(t, self._w_long0, 0.0, 0.0), q)

    def rec_all(self, q):
        return self._family("rec_all", lambda t: self._rec_point(t, self._w_all0, 0.0, 0.0), q)

    def rec_delay(self, q, L):
        return self._family(("rec_delay", L),
                            lambda t: self._rec_point(t, self._w_all0, L, L), q)

    # ----- residence objects (memoized mode) ---------------------------

    def residence_skip(self, lam, pc_short, pc_long_extra):
        """Load profile seen by a predicted-long job: per-arrival prediction
        charges plus short service plus long service predicted below q."""
        key = ("skip", lam, pc_short, pc_long_extra)
        if key not in self._resid:
            vals = self._grid_vals("s1_long",
                                   lambda t: self._below_point(t, self._w_long1, 0.0))
            base = pc_short + pc_long_extra * self.z() + self.s1_short()
            self._resid[key] = _Residence(self._qgrid(), vals + base, lam)
        return self._resid[key]

    def residence_sprpt(self, lam, pc):
        key = ("sprpt", lam, pc)
        if key not in self._resid:
            vals = self._grid_vals("s1_all",
                                   lambda t: self._below_point(t, self._w_all1, 0.0))
            self._resid[key] = _Residence(self._qgrid(), vals + pc, lam)
        return self._resid[key]

    def residence_delay(self, lam, L, pc):
        key = ("delay", lam, L, pc)
        if key not in self._resid:
            d1v = self._grid_vals(("d1", L),
                                  lambda t: self._below_point(t, self._w_all1, L))
            qdv = self._grid_vals(("qd", L),
                                  lambda t: self._above_point(t, self._w_all0, L))
            z2 = self.dist.sf(L)
            base = self.short1(L) + pc * z2
            self._resid[key] = _Residence(self._qgrid(), d1v + L * qdv + base, lam)
        return self._resid[key]


def moments(dist, pm, model=None, params=None, cfg=None, breakpoints=()):
    """Build the moment catalog for one (service, prediction-model) context.

    The catalog is the evaluation context the response functions share: all
    memoized moment grids and quadrature caches live on it, never in module
    globals, so independent catalogs are safe to use concurrently.  model and
    params do not change any moment (costs enter the response formulas, not
    the moments); params may carry probation limits ("L") worth pinning into
    the quadrature grids as breakpoints.
    """
    extra = list(breakpoints)
    if params:
        for key in ("L", "T"):
            val = params.get(key)
            if val is not None and val > 0.0:
                extra.append(float(val))
    return MomentCatalog(dist, pm, cfg=cfg, breakpoints=tuple(extra))


class LoadProfile:
    """Named per-arrival outranking-work entries used by the response formulas.

    Every entry is the expected work E[X] one Poisson arrival contributes
    ahead of the reference job, so multiplying by the arrival rate gives the
    corresponding utilization term.  Entries taking a remaining-size estimate
    r (or probation limit L) are nondecreasing in that argument and converge
    to the relevant total as it grows; outrank_ext(0) equals cheap_short().
    """

    def __init__(self, cat, c1=0.0, c2=0.0):
        self.cat = cat
        self.c1 = float(c1)
        self.c2 = float(c2)

    def total(self):
        """All work an arrival brings (no prediction overhead)."""
        return self.cat.dist.mean

    def cheap_short(self):
        """Service time carried by cheap-flagged-short arrivals."""
        return self.cat.s1_short()

    def cheap_long(self):
        """Service time carried by cheap-flagged-long arrivals."""
        return self.cat.s1_long_all()

    def bit_cost(self):
        """Per-arrival cheap-test overhead when it runs on the server."""
        return self.c1

    def short_srv(self):
        """Work outranking a served short job when tests run on the server."""
        return self.c1 + self.cat.s1_short()

    def new_long_ext(self):
        """Work a fresh arrival holds above a bit-policy long job (external)."""
        return self.cat.s1_short()

    def new_long_srv(self):
        """Work a fresh arrival holds above a bit-policy long job (server)."""
        return self.c1 + self.cat.s1_short()

    def outrank_ext(self, r):
        """Work outranking a skip-style long job at remaining estimate r."""
        return self.cat.s1_short() + self.cat.s1_long(r)

    def outrank_srv(self, r):
        """Server-time variant of outrank_ext, prediction phases included."""
        return self.c1 + self.c2 * self.cat.z() + self.outrank_ext(r)

    def sprpt_ext(self, r):
        """Work outranking an estimate-r job when every job is predicted."""
        return self.cat.s1_all(r)

    def sprpt_srv(self, r):
        return self.c2 + self.cat.s1_all(r)

    def probation(self, L):
        """Work an arrival runs before its rank can exceed the limit L."""
        return self.cat.short1(L) + L * self.cat.dist.sf(L)

    def delay_ext(self, r, L):
        """Work outranking a post-probation job at remaining estimate r."""
        return self.cat.short1(L) + self.cat.d1(r, L) + L * self.cat.qd(r, L)

    def delay_srv(self, r, L):
        return self.delay_ext(r, L) + self.c2 * self.cat.dist.sf(L)


# ----- tagged-job template ------------------------------------------------


@dataclass
class SoapComponents:
    """Inputs to the tagged-job response template for one job.

    ex_new maps the tagged job's age to the expected outranking work brought
    by one later arrival; for the monotone policies it is nonincreasing.
    """

    ex_new: Callable[[float], float]
    ex0_old: float
    ex0_old_sq: float
    ex1_old_sq: float


def _checked_den(val, what):
    if val < _DENOM_FLOOR:
        raise InstabilityError(f"{what} denominator vanished ({val:.3e})")
    return val


def _w_term(lam, ex0, ex0sq, ex1sq, exnew0):
    d0 = _checked_den(1.0 - lam * ex0, "old-work")
    dn = _checked_den(1.0 - lam * exnew0, "new-work")
    return lam * (ex0sq + ex1sq) / (2.0 * d0 * dn)


def soap_mean_response(comp: SoapComponents, x_j: float, lam: float,
                       cfg: QuadratureConfig | None = None):
    """Evaluate the tagged-job template directly (generic, quadrature-based).

    x_j is the residence span: the job's total server-time requirement,
    prediction phases included where the cost model puts them on the server.
    """
    cfg = cfg or _DEFAULT_CFG
    w = _w_term(lam, comp.ex0_old, comp.ex0_old_sq, comp.ex1_old_sq,
                comp.ex_new(0.0))

    def rate(a):
        return 1.0 / _checked_den(1.0 - lam * comp.ex_new(a), "residence")

    return w + integrate(rate, 0.0, x_j, cfg)


# ----- per-policy assembly -------------------------------------------------


def _srv(model):
    return isinstance(model, ServerTime)


def _fcfs_mean(cat, lam):
    es, es2 = cat.dist.mean, cat.dist.second_moment
    return _w_term(lam, es, es2, 0.0, 0.0) + es


def _require_pred(cat, r, x):
    if r is None:
        if cat.pm.expensive_is_point_mass:
            return float(x)
        raise ValueError("this policy needs an expensive prediction value r")
    if r < 0.0:
        raise ValueError("prediction must be nonnegative")
    return float(r)


def _long_pieces(policy, model, cat, x, r):
    """Template inputs plus residence structure for a predicted-long job.

    Returns (ex0, ex0sq, ex1sq, prefix, span, load, resid) where prefix is
    the constant-load head of the residence (prediction phases, probation),
    span the rank-decreasing remainder, load the per-arrival outranking work
    at reference rank q, and resid an optional lam -> memoized-residence
    factory (None when memoization is off).
    """
    srv = _srv(model)
    if isinstance(policy, SkipPredict):
        c1 = model.c1 if srv else 0.0
        c2 = model.c2 if srv else 0.0
        pc = c1 + c2
        z = cat.z()
        s1s, s2s = cat.s1_short(), cat.s2_short()
        s1l, s2l, qv = cat.s1_long(r), cat.s2_long(r), cat.q_long(r)
        ex0 = c1 + c2 * z + s1s + s1l
        ex0sq = (s2s + 2.0 * c1 * s1s + c1 * c1 * (1.0 - z)) \
            + pc * pc * qv \
            + (s2l + 2.0 * pc * s1l + pc * pc * (z - qv))
        ex1sq = cat.rec_long(r)
        load = lambda q: c1 + c2 * z + cat.s1_short() + cat.s1_long(q)
        resid = (lambda lam: cat.residence_skip(lam, c1, c2)) \
            if cat.cfg.memoize else None
        return ex0, ex0sq, ex1sq, pc, x, load, resid
    if isinstance(policy, SPRPT):
        pc = model.c2 if srv else 0.0
        s1a, s2a = cat.s1_all(r), cat.s2_all(r)
        ex0 = pc + s1a
        ex0sq = pc * pc + 2.0 * pc * s1a + s2a
        ex1sq = cat.rec_all(r)
        load = lambda q: pc + cat.s1_all(q)
        resid = (lambda lam: cat.residence_sprpt(lam, pc)) \
            if cat.cfg.memoize else None
        return ex0, ex0sq, ex1sq, pc, x, load, resid
    if isinstance(policy, DelayPredict):
        L = policy.L
        if x < L:
            raise ValueError("job size below the probation limit is never long")
        c2 = model.c2 if srv else 0.0
        z2 = cat.dist.sf(L)
        sh1, sh2 = cat.short1(L), cat.short2(L)
        d1v, d2v, qdv = cat.d1(r, L), cat.d2(r, L), cat.qd(r, L)
        lc = L + c2
        ex0 = sh1 + d1v + c2 * z2 + L * qdv
        ex0sq = sh2 + (d2v + 2.0 * c2 * d1v + c2 * c2 * (z2 - qdv)) + lc * lc * qdv
        ex1sq = cat.rec_delay(r, L)
        load = lambda q: cat.short1(L) + cat.d1(q, L) + c2 * z2 + L * cat.qd(q, L)
        resid = (lambda lam: cat.residence_delay(lam, L, c2)) \
            if cat.cfg.memoize else None
        return ex0, ex0sq, ex1sq, lc, x - L, load, resid
    raise TypeError(f"{type(policy).__name__} has no predicted-long class")


def mean_response_short(policy, model, cat, lam):
    """Mean response of the cheap/short class (NaN when the class is empty)."""
    if lam * expected_requirement(policy, model, cat.dist, cat.pm) >= 1.0:
        raise InstabilityError("offered load at or above one")
    if isinstance(policy, FCFS):
        return _fcfs_mean(cat, lam)
    if isinstance(policy, SPRPT):
        return math.nan
    if isinstance(policy, DelayPredict):
        L = policy.L
        fl = cat.dist.cdf(L)
        if fl < _EMPTY_CLASS:
            return math.nan
        z2 = 1.0 - fl
        ex0 = cat.short1(L) + L * z2
        ex0sq = cat.short2(L) + L * L * z2
        return _w_term(lam, ex0, ex0sq, 0.0, 0.0) + cat.short1(L) / fl
    # OneBit / SkipPredict: identical short-class structure
    c1 = model.c1 if _srv(model) else 0.0
    zs = cat.zshort()
    if zs < _EMPTY_CLASS:
        return math.nan
    s1s, s2s = cat.s1_short(), cat.s2_short()
    ex0 = c1 + s1s
    ex0sq = c1 * c1 + 2.0 * c1 * s1s + s2s
    return _w_term(lam, ex0, ex0sq, 0.0, 0.0) + c1 + s1s / zs


def mean_response_long(policy, model, cat, lam, x, r=None):
    """Mean response of a predicted-long job of size x with prediction r.

    r may be omitted with a point-mass expensive predictor (then r = x) and is
    ignored by the bit-only policy.  FCFS has no long class (NaN).
    """
    if isinstance(policy, FCFS):
        return math.nan
    if lam * expected_requirement(policy, model, cat.dist, cat.pm) >= 1.0:
        raise InstabilityError("offered load at or above one")
    if isinstance(policy, OneBit):
        c1 = model.c1 if _srv(model) else 0.0
        es, es2 = cat.dist.mean, cat.dist.second_moment
        exn = c1 + cat.s1_short()
        w = _w_term(lam, c1 + es, es2 + 2.0 * c1 * es + c1 * c1, 0.0, exn)
        return w + (c1 + x) / _checked_den(1.0 - lam * exn, "bit-long")
    r = _require_pred(cat, r, x)
    ex0, ex0sq, ex1sq, prefix, span, load, resid = \
        _long_pieces(policy, model, cat, x, r)
    w = _w_term(lam, ex0, ex0sq, ex1sq, ex0)
    if resid is not None:
        rf = resid(lam)
        return w + prefix * rf.g(r) + rf.integral(r, span)
    g = lambda q: 1.0 / _checked_den(1.0 - lam * load(q), "residence")
    res = prefix * g(r)
    if span > 0.0:
        res += integrate(lambda u: g(max(r - u, 0.0)), 0.0, span, cat.cfg,
                         points=[r] if 0.0 < r < span else None)
    return w + res


def _long_mean_vec(policy, model, cat, lam, x, rs):
    """Vectorized mean_response_long over an array of predictions (memoized)."""
    ex0, ex0sq, ex1sq, prefix, span, _load, resid = \
        _long_pieces(policy, model, cat, x, rs)
    d0 = 1.0 - lam * ex0
    if np.min(d0) < _DENOM_FLOOR:
        raise InstabilityError("rank-level load at or above one")
    w = lam * (ex0sq + ex1sq) / (2.0 * d0 * d0)
    rf = resid(lam)
    return w + prefix * rf.g(rs) + rf.integral(rs, span)


def job_components(policy, model, cat, d):
    """Tagged-job template inputs for one concrete job descriptor.

    Returns (components, x_j) where x_j is the residence span to hand to
    soap_mean_response: the job's total server-time requirement, prediction
    phases included where the model charges them in server time.
    """
    srv = _srv(model)
    x = d.x
    if isinstance(policy, FCFS):
        return SoapComponents(lambda a: 0.0, cat.dist.mean,
                              cat.dist.second_moment, 0.0), x
    if isinstance(policy, OneBit):
        c1 = model.c1 if srv else 0.0
        if d.b == 1:
            s1s, s2s = cat.s1_short(), cat.s2_short()
            return SoapComponents(lambda a: 0.0, c1 + s1s,
                                  c1 * c1 + 2.0 * c1 * s1s + s2s, 0.0), c1 + x
        es, es2 = cat.dist.mean, cat.dist.second_moment
        exn = c1 + cat.s1_short()
        return SoapComponents(lambda a: exn, c1 + es,
                              es2 + 2.0 * c1 * es + c1 * c1, 0.0), c1 + x
    if isinstance(policy, SkipPredict) and d.b == 1:
        c1 = model.c1 if srv else 0.0
        s1s, s2s = cat.s1_short(), cat.s2_short()
        return SoapComponents(lambda a: 0.0, c1 + s1s,
                              c1 * c1 + 2.0 * c1 * s1s + s2s, 0.0), c1 + x
    if isinstance(policy, DelayPredict) and x <= policy.L:
        L = policy.L
        z2 = cat.dist.sf(L)
        return SoapComponents(lambda a: 0.0, cat.short1(L) + L * z2,
                              cat.short2(L) + L * L * z2, 0.0), x
    r = _require_pred(cat, d.r, x)
    ex0, ex0sq, ex1sq, prefix, span, load, _resid = \
        _long_pieces(policy, model, cat, x, r)

    def ex_new(a):
        if a < prefix:
            return load(r)
        return load(max(r - (a - prefix), 0.0))

    # prefix covers the prediction phases (and probation, whose span is x - L),
    # so the total requirement is always prefix + span
    return SoapComponents(ex_new, ex0, ex0sq, ex1sq), prefix + span


def mean_response_long_avg(policy, model, cat, lam, x):
    """Mean response of a size-x predicted-long job, prediction averaged out."""
    if isinstance(policy, FCFS):
        return math.nan
    if isinstance(policy, OneBit):
        return mean_response_long(policy, model, cat, lam, x)
    if isinstance(policy, DelayPredict) and x < policy.L:
        raise ValueError("job size below the probation limit is never long")
    pm = cat.pm
    if pm.expensive_is_point_mass:
        return mean_response_long(policy, model, cat, lam, x, x)
    exp = pm.expensive
    if cat.cfg.memoize and isinstance(exp, (UniformPredictor, ExponentialPredictor)):
        u, wts = _gl_unit(cat.cfg.prediction_nodes)
        if isinstance(exp, UniformPredictor):
            ts = (1.0 - exp.alpha) * x + 2.0 * exp.alpha * x * u
        else:
            ts = -x * np.log1p(-u)
        vals = _long_mean_vec(policy, model, cat, lam, x, ts)
        return float(np.dot(wts, vals))
    h = pm.conditional_density
    fn = lambda t: h(x, t) * mean_response_long(policy, model, cat, lam, x, t)
    if isinstance(exp, UniformPredictor):
        a = exp.alpha
        return integrate(fn, (1.0 - a) * x, (1.0 + a) * x, cat.cfg)
    return integrate(fn, 0.0, math.inf, cat.cfg, points=[x])


def _combine(w_short, m_short, w_long, m_long):
    if w_long < _EMPTY_CLASS:
        return m_short
    if w_short < _EMPTY_CLASS:
        return m_long
    return w_short * m_short + w_long * m_long


def overall_means_and_cost(policy, model, cat, lam):
    """Class means, overall mean, long fraction, and total cost for one point.

    Returns a dict keyed mean_T_short, mean_T_long, mean_T_all, frac_long,
    total_cost.  Raises InstabilityError when the offered load is >= 1.
    """
    if lam * expected_requirement(policy, model, cat.dist, cat.pm) >= 1.0:
        raise InstabilityError("offered load at or above one")
    cfg = cat.cfg
    if isinstance(policy, FCFS):
        m = _fcfs_mean(cat, lam)
        return {"mean_T_short": m, "mean_T_long": math.nan, "mean_T_all": m,
                "frac_long": 0.0, "total_cost": m}

    if isinstance(policy, OneBit):
        z = cat.z()
        ms = mean_response_short(policy, model, cat, lam)
        if z < _EMPTY_CLASS:
            ml = math.nan
            ma = ms
        else:
            c1 = model.c1 if _srv(model) else 0.0
            es, es2 = cat.dist.mean, cat.dist.second_moment
            exn = c1 + cat.s1_short()
            w = _w_term(lam, c1 + es, es2 + 2.0 * c1 * es + c1 * c1, 0.0, exn)
            ml = w + (c1 + cat.s1_long_all() / z) \
                / _checked_den(1.0 - lam * exn, "bit-long")
            ma = _combine(cat.zshort(), ms, z, ml)
        charge = 0.0 if _srv(model) else model.c1
        return {"mean_T_short": ms, "mean_T_long": ml, "mean_T_all": ma,
                "frac_long": z, "total_cost": ma + charge}

    if isinstance(policy, SkipPredict):
        z = cat.z()
        ms = mean_response_short(policy, model, cat, lam)
        if z < _EMPTY_CLASS:
            ml = math.nan
            ma = ms
        else:
            f, p = cat.dist.pdf, cat._p

            def fn(x):
                wgt = f(x) * (1.0 - p(x))
                if wgt <= 0.0:
                    return 0.0
                return wgt * mean_response_long_avg(policy, model, cat, lam, x)

            ml = integrate(fn, 0.0, math.inf, cfg, cat._weight_points()) / z
            ma = _combine(cat.zshort(), ms, z, ml)
        charge = 0.0 if _srv(model) else model.c1 + model.c2 * z
        return {"mean_T_short": ms, "mean_T_long": ml, "mean_T_all": ma,
                "frac_long": z, "total_cost": ma + charge}

    if isinstance(policy, SPRPT):
        f = cat.dist.pdf
        fn = lambda x: f(x) * mean_response_long_avg(policy, model, cat, lam, x)
        ml = integrate(fn, 0.0, math.inf, cfg, cat._weight_points())
        charge = 0.0 if _srv(model) else model.c2
        return {"mean_T_short": math.nan, "mean_T_long": ml, "mean_T_all": ml,
                "frac_long": 1.0, "total_cost": ml + charge}

    if isinstance(policy, DelayPredict):
        L = policy.L
        z2 = cat.dist.sf(L)
        ms = mean_response_short(policy, model, cat, lam)
        if z2 < _EMPTY_CLASS:
            ml = math.nan
            ma = ms
        else:
            f = cat.dist.pdf

            def fn(x):
                wgt = f(x)
                if wgt <= 0.0 or x < L:
                    return 0.0
                return wgt * mean_response_long_avg(policy, model, cat, lam, x)

            ml = integrate(fn, L, math.inf, cfg, cat._weight_points()) / z2
            ma = _combine(1.0 - z2, ms, z2, ml)
        charge = 0.0 if _srv(model) else model.c2 * z2
        return {"mean_T_short": ms, "mean_T_long": ml, "mean_T_all": ma,
                "frac_long": z2, "total_cost": ma + charge}

    raise TypeError(f"unknown policy {policy!r}")
