"""Service-time laws and two-stage prediction models.

A job of true size x first gets a cheap one-bit classification (short/long
against a threshold T, correct-short with probability p_T(x)), and, if
classified long, a real-valued size estimate drawn from the joint density
g(x, y) = f(x) h(y|x).  Three predictor families are supported:

* perfect   -- p_T(x) = 1{x < T}; the estimate is exactly x (a point mass,
               handled analytically, never by pointwise quadrature).
* exponential -- the estimate is Exp(mean x); p_T(x) = 1 - exp(-T/x).
* uniform(alpha) -- the estimate is Uniform((1-a)x, (1+a)x); p_T is the
               probability that such a draw lands below T.

Everything here is pure except the samplers, which mutate only the numpy
Generator handed to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .policy import JobDescriptor


class PointMassDensityError(ValueError):
    """Raised when a point-mass prediction law is queried as if it had a density."""


def _check_nonneg(x, name="x"):
    if x < 0:
        raise ValueError(f"{name} must be >= 0, got {x}")


# ---------------------------------------------------------------------------
# service-time distributions


@dataclass(frozen=True)
class Exponential:
    """Exponential service times; `mean` is E[S]."""

    mean: float = 1.0

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("mean must be positive")

    @property
    def second_moment(self) -> float:
        return 2.0 * self.mean * self.mean

    def pdf(self, x: float) -> float:
        _check_nonneg(x)
        return math.exp(-x / self.mean) / self.mean

    def cdf(self, x: float) -> float:
        _check_nonneg(x)
        return -math.expm1(-x / self.mean)

    def sf(self, x: float) -> float:
        _check_nonneg(x)
        return math.exp(-x / self.mean)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(self.mean, size)


@dataclass(frozen=True)
class Weibull:
    """Weibull service times with the usual (shape, scale) parameterization.

    The defaults give the heavy-tailed law with CDF 1 - exp(-sqrt(2x)) and
    mean 1 (shape 1/2, scale 1/2).
    """

    shape: float = 0.5
    scale: float = 0.5

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("shape and scale must be positive")

    @property
    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    @property
    def second_moment(self) -> float:
        return self.scale ** 2 * math.gamma(1.0 + 2.0 / self.shape)

    def pdf(self, x: float) -> float:
        _check_nonneg(x)
        if x == 0.0:
            # density diverges at 0 for shape < 1, is k/scale at shape 1, 0 above
            if self.shape < 1.0:
                return math.inf
            if self.shape == 1.0:
                return 1.0 / self.scale
            return 0.0
        t = (x / self.scale) ** self.shape
        return (self.shape / x) * t * math.exp(-t)

    def cdf(self, x: float) -> float:
        _check_nonneg(x)
        return -math.expm1(-((x / self.scale) ** self.shape))

    def sf(self, x: float) -> float:
        _check_nonneg(x)
        return math.exp(-((x / self.scale) ** self.shape))

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale * rng.weibull(self.shape, size)


# ---------------------------------------------------------------------------
# predictor variants


@dataclass(frozen=True)
class PerfectPredictor:
    """Always-correct predictor: the bit is 1{x < T}, the estimate is x itself."""

    is_point_mass = True

    def cheap_prob(self, x: float, T: float) -> float:
        return 1.0 if x < T else 0.0

    def conditional_pdf(self, x: float, y: float) -> float:
        raise PointMassDensityError(
            "perfect predictions are a point mass at y = x; integrate them "
            "analytically instead of evaluating a density"
        )

    def conditional_cdf(self, x: float, r: float) -> float:
        return 1.0 if r >= x else 0.0

    def sample_conditional(self, x, rng: np.random.Generator):
        return np.asarray(x, dtype=float) if np.ndim(x) else float(x)

    def cheap_prob_vec(self, x: np.ndarray, T: float) -> np.ndarray:
        return (x < T).astype(float)


@dataclass(frozen=True)
class ExponentialPredictor:
    """Estimate for a size-x job is exponential with mean x."""

    is_point_mass = False

    def cheap_prob(self, x: float, T: float) -> float:
        if x == 0.0:
            return 1.0 if T > 0 else 0.0
        return -math.expm1(-T / x)

    def conditional_pdf(self, x: float, y: float) -> float:
        return math.exp(-y / x) / x

    def conditional_cdf(self, x: float, r: float) -> float:
        return -math.expm1(-r / x)

    def sample_conditional(self, x, rng: np.random.Generator):
        return x * rng.standard_exponential(np.shape(x) if np.ndim(x) else None)

    def cheap_prob_vec(self, x: np.ndarray, T: float) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        pos = x > 0
        out[pos] = -np.expm1(-T / x[pos])
        out[~pos] = 1.0 if T > 0 else 0.0
        return out


@dataclass(frozen=True)
class UniformPredictor:
    """Estimate for a size-x job is uniform on [(1-alpha)x, (1+alpha)x]."""

    alpha: float

    is_point_mass = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    def cheap_prob(self, x: float, T: float) -> float:
        a = self.alpha
        lo = (1.0 - a) * x
        hi = (1.0 + a) * x
        if T <= lo:
            return 0.0
        if T >= hi:
            return 1.0
        return (T - lo) / (2.0 * a * x)

    def conditional_pdf(self, x: float, y: float) -> float:
        a = self.alpha
        if (1.0 - a) * x <= y <= (1.0 + a) * x:
            return 1.0 / (2.0 * a * x)
        return 0.0

    def conditional_cdf(self, x: float, r: float) -> float:
        a = self.alpha
        lo = (1.0 - a) * x
        if r <= lo:
            return 0.0
        hi = (1.0 + a) * x
        if r >= hi:
            return 1.0
        return (r - lo) / (2.0 * a * x)

    def sample_conditional(self, x, rng: np.random.Generator):
        u = rng.random(np.shape(x) if np.ndim(x) else None)
        return x * (1.0 - self.alpha + 2.0 * self.alpha * u)

    def cheap_prob_vec(self, x: np.ndarray, T: float) -> np.ndarray:
        a = self.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            p = (T - (1.0 - a) * x) / (2.0 * a * x)
        p = np.clip(p, 0.0, 1.0)
        p[x == 0.0] = 1.0 if T > 0 else 0.0  # degenerate corner, matches cheap_prob
        return p


# ---------------------------------------------------------------------------
# the two-stage model


@dataclass(frozen=True)
class PredictionModel:
    """Cheap bit + expensive estimate for jobs drawn from `service`.

    Parameters
    ----------
    service : Exponential or Weibull
        The service-time law f the predictions are coupled to.
    cheap, expensive : predictor variants
        The law of the one-bit stage and of the size-estimate stage.
    threshold : float
        The short/long cutoff T used by the cheap stage.
    """

    service: Exponential | Weibull
    cheap: PerfectPredictor | ExponentialPredictor | UniformPredictor
    expensive: PerfectPredictor | ExponentialPredictor | UniformPredictor
    threshold: float

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    # -- cheap stage

    def cheap_predict_prob(self, x: float) -> float:
        """p_T(x): probability a size-x job is classified short."""
        _check_nonneg(x)
        return self.cheap.cheap_prob(x, self.threshold)

    def long_fraction(self) -> float:
        """z: equilibrium fraction of jobs classified long, integral f (1 - p_T)."""
        val, _ = quad(
            lambda x: self.service.pdf(x) * (1.0 - self.cheap_predict_prob(x)),
            0.0,
            np.inf,
            epsabs=1e-12,
            epsrel=1e-10,
            limit=200,
        )
        return val

    # -- expensive stage

    @property
    def expensive_is_point_mass(self) -> bool:
        return self.expensive.is_point_mass

    def expensive_density(self, x: float, y: float) -> float:
        """Joint density g(x, y) = f(x) h(y|x) of (true size, estimate)."""
        if x <= 0:
            raise ValueError("x must be > 0")
        _check_nonneg(y, "y")
        return self.service.pdf(x) * self.expensive.conditional_pdf(x, y)

    def conditional_density(self, x: float, y: float) -> float:
        """h(y|x): estimate density for a job of known size x."""
        if x <= 0:
            raise ValueError("x must be > 0")
        _check_nonneg(y, "y")
        return self.expensive.conditional_pdf(x, y)

    def conditional_cdf(self, x: float, r: float) -> float:
        """P(estimate <= r | size = x); defined for all variants incl. perfect."""
        if r <= 0:
            return 0.0
        return self.expensive.conditional_cdf(x, r)

    def predicted_marginal(self, y: float) -> float:
        """f_p(y): marginal density of the estimate over a random job."""
        _check_nonneg(y, "y")
        exp_pred = self.expensive
        if exp_pred.is_point_mass:
            return self.service.pdf(y)
        if isinstance(exp_pred, UniformPredictor):
            if y == 0.0:
                return 0.0
            a = exp_pred.alpha
            lo, hi = y / (1.0 + a), y / (1.0 - a)
            val, _ = quad(
                lambda x: self.service.pdf(x) / (2.0 * a * x), lo, hi,
                epsabs=1e-12, epsrel=1e-10, limit=200,
            )
            return val
        if y == 0.0:
            return math.inf  # exponential estimates pile up at 0 from tiny jobs
        val, _ = quad(
            lambda x: self.service.pdf(x) * exp_pred.conditional_pdf(x, y),
            0.0,
            np.inf,
            epsabs=1e-12,
            epsrel=1e-10,
            limit=200,
        )
        return val

    # -- samplers (vectorized; used in batches by the simulator)

    def sample_bits(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Cheap bits for an array of sizes: 1 = predicted short."""
        p = self.cheap.cheap_prob_vec(np.asarray(x, dtype=float), self.threshold)
        return (rng.random(p.shape) < p).astype(np.int8)

    def sample_predictions(self, x, rng: np.random.Generator):
        """Expensive estimates drawn from h(.|x), elementwise."""
        return self.expensive.sample_conditional(x, rng)


def sample_job(dist, pm: PredictionModel, rng: np.random.Generator) -> JobDescriptor:
    """Draw one job: size x ~ f, bit b ~ Bernoulli(p_T(x)), estimate r if b = 0."""
    x = float(dist.sample(rng))
    b = 1 if rng.random() < pm.cheap_predict_prob(x) else 0
    r = None if b == 1 else float(pm.sample_predictions(x, rng))
    return JobDescriptor(x=x, b=b, r=r)
