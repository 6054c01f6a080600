"""Rank functions for the five policies under both prediction cost models.

Every policy is expressed the same way: a job's rank at age a (attained
service, predictions included when they run on the server) is a lexicographic
pair <class, key>, lower served first, and within each contiguous age phase
the key decreases at slope -1.  That uniform shape is what lets one
preemptive-resume event loop serve FCFS, 1bit, SPRPT, SkipPredict, and
DelayPredict alike: a job's rank is frozen while it waits, so the running
argmin can only change at an arrival or when the served job crosses a phase
boundary.

Phase tables (key at age a is key0 - a within each phase):

  policy          external model               server-time model
  ------          --------------               -----------------
  FCFS            <1, -a>                      same (no predictions)
  1bit            b=1: <1,-a>  b=0: <2,-a>     <2,-a> for a<c1, then b=1:<1,-a> / b=0:<3,-a>
  SPRPT           <1, r-a>                     <1,-a> for a<c2, then <2, r-a>
  SkipPredict     b=1: <1,-a>  b=0: <2,r-a>    <2,-a> for a<c1, then b=1:<1,-a>;
                                               b=0: <3,-a> for a<c1+c2, then <4, r-a>
  DelayPredict    <1,-a> for a<L, then <2,r-a> <1,-a> for a<L, <2,-a> for a<L+c2,
                                               then <3, r-a>

Ties between equal ranks go to the earlier arrival, then the lower job id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

#: absolute slack when comparing an age against a phase boundary, absorbing
#: float drift from the event loop's time arithmetic
AGE_EPS = 1e-12


@dataclass(frozen=True)
class JobDescriptor:
    """Static attributes of one job: true size, cheap bit, expensive estimate.

    b = 1 means predicted short; r is None exactly when the policy at hand
    never draws the expensive prediction for this job.
    """

    x: float
    b: Optional[int] = None
    r: Optional[float] = None

    def __post_init__(self):
        if self.x <= 0:
            raise ValueError("job size must be positive")
        if self.r is not None and self.r < 0:
            raise ValueError("prediction must be >= 0")


class Rank(NamedTuple):
    """Lexicographic scheduling priority; tuple order gives <c1,k1> < <c2,k2>."""

    cls: int
    key: float


# --- policy and cost-model variants ----------------------------------------


@dataclass(frozen=True)
class FCFS:
    pass


@dataclass(frozen=True)
class OneBit:
    T: float = 1.0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass(frozen=True)
class SPRPT:
    pass


@dataclass(frozen=True)
class SkipPredict:
    T: float = 1.0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass(frozen=True)
class DelayPredict:
    L: float = 1.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be > 0")


@dataclass(frozen=True)
class External:
    """Predictions happen off-server; c1/c2 are charges added to the cost."""

    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("prediction charges must be >= 0")


@dataclass(frozen=True)
class ServerTime:
    """Predictions run on the server, consuming c1/c2 of its time per stage."""

    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("prediction times must be >= 0")


POLICY_NAMES = {
    "fcfs": FCFS,
    "onebit": OneBit,
    "sprpt": SPRPT,
    "skippredict": SkipPredict,
    "delaypredict": DelayPredict,
}

COST_MODEL_NAMES = {"external": External, "server": ServerTime}


def _require_bit(d: JobDescriptor, policy) -> int:
    if d.b is None:
        raise ValueError(f"{type(policy).__name__} needs the cheap bit, descriptor has none")
    return d.b


def _require_pred(d: JobDescriptor, policy) -> float:
    if d.r is None:
        raise ValueError(f"{type(policy).__name__} needs an expensive prediction, descriptor has none")
    return d.r


def pieces(policy, model, d: JobDescriptor) -> tuple[tuple[float, int, float], ...]:
    """Phase table for one job: tuples (age_hi, class, key0), key = key0 - a.

    Phases are half-open [lo, hi); the last hi is +inf.  This is the single
    source of truth that rank(), phase_boundaries(), and the simulator share.
    """
    ext = isinstance(model, External)
    if isinstance(policy, FCFS):
        return ((float("inf"), 1, 0.0),)

    if isinstance(policy, OneBit):
        b = _require_bit(d, policy)
        if ext:
            return ((float("inf"), 1 if b == 1 else 2, 0.0),)
        c1 = model.c1
        return ((c1, 2, 0.0), (float("inf"), 1 if b == 1 else 3, 0.0))

    if isinstance(policy, SPRPT):
        r = _require_pred(d, policy)
        if ext:
            return ((float("inf"), 1, r),)
        # server model: the estimate itself is computed first, at top priority
        return ((model.c2, 1, 0.0), (float("inf"), 2, r))

    if isinstance(policy, SkipPredict):
        b = _require_bit(d, policy)
        if ext:
            if b == 1:
                return ((float("inf"), 1, 0.0),)
            return ((float("inf"), 2, _require_pred(d, policy)),)
        c1, c2 = model.c1, model.c2
        if b == 1:
            return ((c1, 2, 0.0), (float("inf"), 1, 0.0))
        r = _require_pred(d, policy)
        return ((c1, 2, 0.0), (c1 + c2, 3, 0.0), (float("inf"), 4, r))

    if isinstance(policy, DelayPredict):
        L = policy.L
        if d.x <= L:
            # finishes inside the limited FCFS phase, never predicted
            return ((float("inf"), 1, 0.0),)
        r = _require_pred(d, policy)
        if ext:
            return ((L, 1, 0.0), (float("inf"), 2, r))
        return ((L, 1, 0.0), (L + model.c2, 2, 0.0), (float("inf"), 3, r))

    raise TypeError(f"unknown policy {policy!r}")


def rank(policy, model, d: JobDescriptor, a: float) -> Rank:
    """Rank of job d at age a; lower is served first."""
    if a < 0:
        raise ValueError("age must be >= 0")
    for hi, cls, key0 in pieces(policy, model, d):
        if a < hi - AGE_EPS:
            return Rank(cls, key0 - a)
    raise AssertionError("unreachable: last phase is unbounded")


def service_requirement(policy, model, d: JobDescriptor) -> float:
    """Total server time the job needs, prediction stages included."""
    if isinstance(model, External):
        return d.x
    if isinstance(policy, FCFS):
        return d.x
    if isinstance(policy, OneBit):
        _require_bit(d, policy)
        return d.x + model.c1
    if isinstance(policy, SPRPT):
        return d.x + model.c2
    if isinstance(policy, SkipPredict):
        b = _require_bit(d, policy)
        return d.x + model.c1 + (model.c2 if b == 0 else 0.0)
    if isinstance(policy, DelayPredict):
        return d.x + (model.c2 if d.x > policy.L else 0.0)
    raise TypeError(f"unknown policy {policy!r}")


def phase_boundaries(policy, model, d: JobDescriptor) -> list[float]:
    """Ages at which the job's rank class changes, in increasing order."""
    return [hi for hi, _, _ in pieces(policy, model, d)[:-1]]
