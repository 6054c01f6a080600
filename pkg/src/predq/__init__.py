"""predq: scheduling with costly size predictions in M/G/1 queues.

A rank-function-driven discrete-event simulator and a numerical analytic
engine for the mean response time and total cost of FCFS, 1bit, SPRPT,
SkipPredict, and DelayPredict under two prediction cost models (external
charges vs. predictions consuming server time).
"""

from .distributions import (
    Exponential,
    Weibull,
    PerfectPredictor,
    ExponentialPredictor,
    UniformPredictor,
    PredictionModel,
    PointMassDensityError,
    sample_job,
)
from .policy import (
    JobDescriptor,
    Rank,
    FCFS,
    OneBit,
    SPRPT,
    SkipPredict,
    DelayPredict,
    External,
    ServerTime,
    rank,
    service_requirement,
    phase_boundaries,
)
from .simulator import (
    SimConfig,
    SimStats,
    run,
    total_cost,
    total_cost_ci,
    expected_requirement,
    InstabilityError,
    QueueOverflowError,
)
from .analytic import (
    QuadratureConfig,
    NonConvergenceError,
    integrate,
    MomentCatalog,
    moments,
    LoadProfile,
    SoapComponents,
    soap_mean_response,
    job_components,
    mean_response_short,
    mean_response_long,
    mean_response_long_avg,
    overall_means_and_cost,
)

__version__ = "0.1.0"

__all__ = [
    "Exponential",
    "Weibull",
    "PerfectPredictor",
    "ExponentialPredictor",
    "UniformPredictor",
    "PredictionModel",
    "PointMassDensityError",
    "sample_job",
    "JobDescriptor",
    "Rank",
    "FCFS",
    "OneBit",
    "SPRPT",
    "SkipPredict",
    "DelayPredict",
    "External",
    "ServerTime",
    "rank",
    "service_requirement",
    "phase_boundaries",
    "SimConfig",
    "SimStats",
    "run",
    "total_cost",
    "total_cost_ci",
    "expected_requirement",
    "InstabilityError",
    "QueueOverflowError",
    "QuadratureConfig",
    "NonConvergenceError",
    "integrate",
    "MomentCatalog",
    "moments",
    "LoadProfile",
    "SoapComponents",
    "soap_mean_response",
    "job_components",
    "mean_response_short",
    "mean_response_long",
    "mean_response_long_avg",
    "overall_means_and_cost",
    "__version__",
]
