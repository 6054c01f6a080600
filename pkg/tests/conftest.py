import math

import pytest
from hypothesis import settings, HealthCheck

from predq import (
    Exponential,
    Weibull,
    PerfectPredictor,
    ExponentialPredictor,
    UniformPredictor,
    PredictionModel,
)

settings.register_profile(
    "predq",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("predq")

E_INV = math.exp(-1.0)


@pytest.fixture(scope="session")
def exp_dist():
    return Exponential(1.0)


@pytest.fixture(scope="session")
def weib_dist():
    return Weibull(0.5, 0.5)


@pytest.fixture(scope="session")
def perfect_pm(exp_dist):
    return PredictionModel(service=exp_dist, cheap=PerfectPredictor(),
                           expensive=PerfectPredictor(), threshold=1.0)


@pytest.fixture(scope="session")
def uniform_pm(exp_dist):
    return PredictionModel(service=exp_dist, cheap=UniformPredictor(0.8),
                           expensive=UniformPredictor(0.2), threshold=1.0)


@pytest.fixture(scope="session")
def exp_pred_pm(exp_dist):
    return PredictionModel(service=exp_dist, cheap=ExponentialPredictor(),
                           expensive=ExponentialPredictor(), threshold=1.0)
