"""Discrete-event preemptive-resume M/G/1 simulator driven by rank functions.

The scheduling rule is generic: always serve the job whose lexicographic
<class, key> rank is lowest, ties to the earlier arrival.  Because every
policy's key decreases at slope -1 within a phase, a waiting job's rank is
frozen and the served job's rank only improves until its next phase boundary;
the running argmin can therefore change only at an arrival or when the served
job crosses a boundary.  The event loop exploits exactly that: the served
job's next self-event is min(phase boundary, completion), and arrivals are
merged in as they come.  This is exact, not a heuristic.

Statistics are recorded per cheap-prediction class (policy-appropriate: bit
classes for 1bit/SkipPredict, everything long for SPRPT, short iff the job
never outlived the probation limit for DelayPredict).  Point estimates are
pooled over replications, which makes the overall mean exactly the
fraction-weighted combination of the class means; 95% half-widths are
Student-t intervals over replication-level means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np
from scipy.stats import t as _student_t

from .policy import (
    FCFS,
    OneBit,
    SPRPT,
    SkipPredict,
    DelayPredict,
    External,
    ServerTime,
    JobDescriptor,
    pieces,
    rank,
    service_requirement,
)

_CHUNK = 32768


def t95_halfwidth(vals):
    """95% half-width for the mean of replication values (Student t).

    NaN entries (empty classes in a replication) are dropped; fewer than two
    usable values gives NaN.
    """
    vals = [v for v in vals if not math.isnan(v)]
    n = len(vals)
    if n < 2:
        return math.nan
    m = sum(vals) / n
    var = sum((v - m) ** 2 for v in vals) / (n - 1)
    return float(_student_t.ppf(0.975, n - 1)) * math.sqrt(var / n)


class InstabilityError(RuntimeError):
    """Offered load (service + on-server prediction work) is >= 1."""


class QueueOverflowError(RuntimeError):
    """Queue length exceeded the configured cap; partial stats attached."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class SimConfig:
    """Run-shape parameters.

    n_jobs and warmup_jobs are totals across all replications: each
    replication records n_jobs/replications departures after discarding
    warmup_jobs/replications.  warmup_jobs defaults to 10% of n_jobs.
    """

    lam: float
    n_jobs: int = 100_000
    warmup_jobs: int | None = None
    seed: int = 0
    replications: int = 10
    queue_cap: int = 1_000_000

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("arrival rate must be positive")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        warm = self.effective_warmup
        if not self.n_jobs > warm >= 0:
            raise ValueError("need n_jobs > warmup_jobs >= 0")

    @property
    def effective_warmup(self) -> int:
        return self.n_jobs // 10 if self.warmup_jobs is None else self.warmup_jobs


@dataclass
class SimStats:
    """Pooled response-time estimates with replication-based half-widths."""

    mean_T_short: float
    hw_short: float
    mean_T_long: float
    hw_long: float
    mean_T_all: float
    hw_all: float
    frac_long: float
    n_recorded: int
    seed: int
    valid: bool = True
    flag: str = ""
    # per-replication means, for CIs on derived quantities (e.g. total cost)
    rep_all: list = field(default_factory=list)
    rep_short: list = field(default_factory=list)
    rep_long: list = field(default_factory=list)
    rep_frac: list = field(default_factory=list)
    # optional (x, prediction, is_long, response) sample for conditional bins
    pairs: np.ndarray | None = None


def expected_requirement(policy, model, dist, pm=None) -> float:
    """E[service_requirement] for the stability gate."""
    if isinstance(model, External):
        return dist.mean
    if isinstance(policy, FCFS):
        return dist.mean
    if isinstance(policy, OneBit):
        return dist.mean + model.c1
    if isinstance(policy, SPRPT):
        return dist.mean + model.c2
    if isinstance(policy, SkipPredict):
        if pm is None:
            raise ValueError("SkipPredict stability check needs the prediction model")
        return dist.mean + model.c1 + model.c2 * pm.long_fraction()
    if isinstance(policy, DelayPredict):
        return dist.mean + model.c2 * dist.sf(policy.L)
    raise TypeError(f"unknown policy {policy!r}")


def _gen_chunk(policy, model, dist, pm, lam, rng):
    """One batch of jobs: arrays of interarrival gaps plus per-job attributes."""
    gaps = rng.exponential(1.0 / lam, _CHUNK)
    xs = dist.sample(rng, _CHUNK)
    needs_bits = isinstance(policy, (OneBit, SkipPredict))
    needs_preds = isinstance(policy, (SPRPT, SkipPredict, DelayPredict))
    bits = pm.sample_bits(xs, rng) if needs_bits else None
    preds = np.asarray(pm.sample_predictions(xs, rng), dtype=float) if needs_preds else None

    if isinstance(policy, FCFS):
        is_long = np.zeros(_CHUNK, dtype=bool)
    elif isinstance(policy, SPRPT):
        is_long = np.ones(_CHUNK, dtype=bool)
    elif isinstance(policy, DelayPredict):
        is_long = xs > policy.L
    else:
        is_long = bits == 0

    # per-job total requirement
    if isinstance(model, External) or isinstance(policy, FCFS):
        reqs = xs.copy()
    elif isinstance(policy, OneBit):
        reqs = xs + model.c1
    elif isinstance(policy, SPRPT):
        reqs = xs + model.c2
    elif isinstance(policy, SkipPredict):
        reqs = xs + model.c1 + np.where(is_long, model.c2, 0.0)
    else:  # DelayPredict, server model
        reqs = xs + np.where(is_long, model.c2, 0.0)

    descs = _piece_tables(policy, model, xs, bits, preds, is_long)
    return (
        gaps.tolist(),
        xs.tolist(),
        reqs.tolist(),
        is_long.tolist(),
        descs,
        preds.tolist() if preds is not None else [math.nan] * _CHUNK,
    )


def _piece_tables(policy, model, xs, bits, preds, is_long):
    """Phase tables per job, same layout as policy.pieces(): (hi, cls, key0)."""
    inf = float("inf")
    ext = isinstance(model, External)
    n = len(xs)
    if isinstance(policy, FCFS):
        return [((inf, 1, 0.0),)] * n
    if isinstance(policy, OneBit):
        if ext:
            short = ((inf, 1, 0.0),)
            long_ = ((inf, 2, 0.0),)
            return [short if b else long_ for b in bits]
        c1 = model.c1
        short = ((c1, 2, 0.0), (inf, 1, 0.0))
        long_ = ((c1, 2, 0.0), (inf, 3, 0.0))
        return [short if b else long_ for b in bits]
    if isinstance(policy, SPRPT):
        if ext:
            return [((inf, 1, r),) for r in preds.tolist()]
        c2 = model.c2
        return [((c2, 1, 0.0), (inf, 2, r)) for r in preds.tolist()]
    if isinstance(policy, SkipPredict):
        if ext:
            short = ((inf, 1, 0.0),)
            return [
                short if b else ((inf, 2, r),)
                for b, r in zip(bits.tolist(), preds.tolist())
            ]
        c1, c2 = model.c1, model.c2
        short = ((c1, 2, 0.0), (inf, 1, 0.0))
        return [
            short if b else ((c1, 2, 0.0), (c1 + c2, 3, 0.0), (inf, 4, r))
            for b, r in zip(bits.tolist(), preds.tolist())
        ]
    # DelayPredict
    L = policy.L
    short = ((inf, 1, 0.0),)
    if ext:
        return [
            ((L, 1, 0.0), (inf, 2, r)) if lng else short
            for lng, r in zip(is_long.tolist(), preds.tolist())
        ]
    c2 = model.c2
    return [
        ((L, 1, 0.0), (L + c2, 2, 0.0), (inf, 3, r)) if lng else short
        for lng, r in zip(is_long.tolist(), preds.tolist())
    ]


def _replicate(policy, model, dist, pm, lam, n_record, n_warmup, seed_seq,
               queue_cap, debug, collect):
    """One replication; returns per-class (count, sum) and optional pairs."""
    rng = np.random.default_rng(seed_seq)
    needed = n_record + n_warmup

    # growing per-job state
    arr_t: list[float] = []   # arrival times
    sizes: list[float] = []
    reqs: list[float] = []
    longs: list[bool] = []
    tables: list[tuple] = []
    rpred: list[float] = []
    att: list[float] = []     # attained at last freeze
    pidx: list[int] = []      # current phase index

    next_gen_t = 0.0          # arrival clock for generation
    gi = 0                    # next ungenerated jid
    ai = 0                    # next jid to arrive (index into generated arrays)

    def gen_more():
        nonlocal next_gen_t, gi
        gaps, xs, rq, lg, tb, pr = _gen_chunk(policy, model, dist, pm, lam, rng)
        for g in gaps:
            next_gen_t += g
            arr_t.append(next_gen_t)
        sizes.extend(xs)
        reqs.extend(rq)
        longs.extend(lg)
        tables.extend(tb)
        rpred.extend(pr)
        att.extend([0.0] * len(xs))
        pidx.extend([0] * len(xs))
        gi += len(xs)

    gen_more()

    heap: list = []           # (cls, key, arrival, jid) -- frozen ranks
    served = -1
    sv_start = sv_att0 = sv_req = sv_key0 = 0.0
    sv_hi = math.inf
    sv_cls = 0

    done = 0                  # departures so far (incl. warmup)
    cnt_s = cnt_l = 0
    sum_s = sum_l = 0.0
    pairs = [] if collect else None
    t = 0.0
    fcfs_policy = isinstance(policy, FCFS)

    def start_serving(jid):
        nonlocal served, sv_start, sv_att0, sv_req, sv_hi, sv_cls, sv_key0
        served = jid
        sv_start = t
        a0 = att[jid]
        sv_att0 = a0
        sv_req = reqs[jid]
        hi, cls, key0 = tables[jid][pidx[jid]]
        # skip phases already passed (possible when resuming exactly at a boundary)
        while a0 >= hi:
            pidx[jid] += 1
            hi, cls, key0 = tables[jid][pidx[jid]]
        sv_hi, sv_cls, sv_key0 = hi, cls, key0

    def debug_check_argmin():
        # exhaustive rank re-scan: the served job must be the global argmin
        best = None
        for j in range(ai):
            if att[j] >= reqs[j] or (j != served and not any(e[3] == j for e in heap)):
                continue
            a = att[j] if j != served else sv_att0 + (t - sv_start)
            hi, cls, key0 = tables[j][pidx[j]]
            cand = (cls, key0 - a, arr_t[j], j)
            if best is None or cand < best:
                best = cand
        assert best is None or best[3] == served, (
            f"argmin violated at t={t}: served {served}, best {best}"
        )

    while done < needed:
        if served >= 0:
            stop_age = sv_req if sv_req <= sv_hi else sv_hi
            t_self = sv_start + (stop_age - sv_att0)
        else:
            t_self = math.inf
            if debug:
                assert not heap, "work conservation violated: idle with waiting jobs"
        if ai >= gi:
            gen_more()
        t_arr = arr_t[ai]

        if t_arr <= t_self:
            # --- arrival
            t = t_arr
            jid = ai
            ai += 1
            if len(heap) + (1 if served >= 0 else 0) + 1 > queue_cap:
                raise QueueOverflowError(
                    f"queue exceeded cap {queue_cap} at t={t:.6g}",
                    partial=_pool_stats([(cnt_s, sum_s, cnt_l, sum_l)], seed=0,
                                        valid=False, flag="overload"),
                )
            hi, cls, key0 = tables[jid][0]
            if served < 0:
                start_serving(jid)
            else:
                cur_key = sv_key0 - (sv_att0 + (t - sv_start))
                if (cls, key0, t, jid) < (sv_cls, cur_key, arr_t[served], served):
                    if debug and fcfs_policy:
                        raise AssertionError("FCFS must never preempt")
                    # freeze incumbent and switch
                    a_now = sv_att0 + (t - sv_start)
                    att[served] = a_now
                    heappush(heap, (sv_cls, sv_key0 - a_now, arr_t[served], served))
                    start_serving(jid)
                else:
                    heappush(heap, (cls, key0, t, jid))
        else:
            # --- served job's self event
            t = t_self
            if sv_req <= sv_hi:
                # completion
                jid = served
                att[jid] = sv_req
                if debug:
                    assert abs(att[jid] - reqs[jid]) < 1e-9, "attained != requirement"
                done += 1
                if done > n_warmup:
                    resp = t - arr_t[jid]
                    if longs[jid]:
                        cnt_l += 1
                        sum_l += resp
                    else:
                        cnt_s += 1
                        sum_s += resp
                    if collect:
                        pairs.append((sizes[jid], rpred[jid], float(longs[jid]), resp))
                tables[jid] = None  # free
                if heap:
                    _, _, _, nxt = heappop(heap)
                    start_serving(nxt)
                else:
                    served = -1
            else:
                # phase boundary crossing; rank class changes, key continuous in age
                jid = served
                a_now = sv_hi
                att[jid] = a_now
                pidx[jid] += 1
                sv_hi, sv_cls, sv_key0 = tables[jid][pidx[jid]]
                sv_att0 = a_now
                sv_start = t
                if heap:
                    key_now = sv_key0 - a_now
                    if heap[0] < (sv_cls, key_now, arr_t[jid], jid):
                        heappush(heap, (sv_cls, key_now, arr_t[jid], jid))
                        _, _, _, nxt = heappop(heap)
                        start_serving(nxt)
            if debug:
                debug_check_argmin()

    return (cnt_s, sum_s, cnt_l, sum_l), (pairs if collect else None)


def _pool_stats(parts, seed, valid=True, flag=""):
    """Pooled point estimates + replication-level half-widths."""
    cnt_s = sum(p[0] for p in parts)
    sum_s = sum(p[1] for p in parts)
    cnt_l = sum(p[2] for p in parts)
    sum_l = sum(p[3] for p in parts)
    n = cnt_s + cnt_l
    mean_s = sum_s / cnt_s if cnt_s else math.nan
    mean_l = sum_l / cnt_l if cnt_l else math.nan
    mean_all = (sum_s + sum_l) / n if n else math.nan
    frac = cnt_l / n if n else math.nan

    rep_all, rep_short, rep_long, rep_frac = [], [], [], []
    for cs, ss, cl, sl in parts:
        tot = cs + cl
        rep_all.append((ss + sl) / tot if tot else math.nan)
        rep_short.append(ss / cs if cs else math.nan)
        rep_long.append(sl / cl if cl else math.nan)
        rep_frac.append(cl / tot if tot else math.nan)

    hw = t95_halfwidth

    return SimStats(
        mean_T_short=mean_s,
        hw_short=hw(rep_short),
        mean_T_long=mean_l,
        hw_long=hw(rep_long),
        mean_T_all=mean_all,
        hw_all=hw(rep_all),
        frac_long=frac,
        n_recorded=n,
        seed=seed,
        valid=valid,
        flag=flag,
        rep_all=rep_all,
        rep_short=rep_short,
        rep_long=rep_long,
        rep_frac=rep_frac,
    )


def run(policy, model, dist, pm, cfg: SimConfig, force=False, debug=False,
        collect_pairs=False) -> SimStats:
    """Simulate the policy and return per-class response-time statistics.

    Refuses to run when the offered load is >= 1 unless force=True; with
    force, a run that outgrows cfg.queue_cap raises QueueOverflowError with
    partial, invalid stats attached.
    """
    load = cfg.lam * expected_requirement(policy, model, dist, pm)
    if load >= 1.0 and not force:
        raise InstabilityError(
            f"offered load {load:.4f} >= 1 for {type(policy).__name__}; "
            "pass force=True to run anyway"
        )

    reps = cfg.replications
    per_rep = cfg.n_jobs // reps
    warm_rep = cfg.effective_warmup // reps
    if per_rep < 1:
        raise ValueError("n_jobs too small for the replication count")

    seeds = np.random.SeedSequence(cfg.seed).spawn(reps)
    parts = []
    all_pairs = []
    for s in seeds:
        part, pairs = _replicate(
            policy, model, dist, pm, cfg.lam, per_rep, warm_rep, s,
            cfg.queue_cap, debug, collect_pairs,
        )
        parts.append(part)
        if pairs:
            all_pairs.extend(pairs)

    stats = _pool_stats(parts, seed=cfg.seed)
    if collect_pairs:
        stats.pairs = np.asarray(all_pairs, dtype=float)
    return stats


def total_cost(stats: SimStats, policy, model, c1: float, c2: float) -> float:
    """Total cost of a run: response time plus the policy's prediction charge."""
    if isinstance(model, ServerTime):
        return stats.mean_T_all  # predictions already paid for in server time
    if isinstance(policy, FCFS):
        charge = 0.0
    elif isinstance(policy, OneBit):
        charge = c1
    elif isinstance(policy, SPRPT):
        charge = c2
    elif isinstance(policy, SkipPredict):
        charge = c1 + c2 * stats.frac_long
    elif isinstance(policy, DelayPredict):
        charge = c2 * stats.frac_long  # no cheap stage
    else:
        raise TypeError(f"unknown policy {policy!r}")
    return stats.mean_T_all + charge


def total_cost_ci(stats: SimStats, policy, model, c1: float, c2: float):
    """(cost, 95% half-width) with the prediction charge folded in per replication."""
    cost = total_cost(stats, policy, model, c1, c2)
    if isinstance(model, ServerTime):
        return cost, stats.hw_all
    per_rep = []
    for m, fr in zip(stats.rep_all, stats.rep_frac):
        if isinstance(policy, SkipPredict):
            per_rep.append(m + c1 + c2 * fr)
        elif isinstance(policy, DelayPredict):
            per_rep.append(m + c2 * fr)
        elif isinstance(policy, OneBit):
            per_rep.append(m + c1)
        elif isinstance(policy, SPRPT):
            per_rep.append(m + c2)
        else:
            per_rep.append(m)
    return cost, t95_halfwidth(per_rep)


def binned_long_means(pairs: np.ndarray, n_bins: int = 10):
    """Decile-bin the long-class (x, prediction, response) sample by size.

    Returns a list of dicts per bin with the member sizes/predictions, the
    mean simulated response, and its normal-approximation standard error --
    the raw material for conditional response-time comparisons.
    """
    if pairs is None or len(pairs) == 0:
        return []
    longs = pairs[pairs[:, 2] == 1.0]
    if len(longs) == 0:
        return []
    xs, rs, ts = longs[:, 0], longs[:, 1], longs[:, 3]
    edges = np.quantile(xs, np.linspace(0, 1, n_bins + 1))
    out = []
    for i in range(n_bins):
        lo, hi = edges[i], edges[i + 1]
        m = (xs >= lo) & (xs <= hi if i == n_bins - 1 else xs < hi)
        if m.sum() < 2:
            continue
        out.append(
            {
                "lo": float(lo),
                "hi": float(hi),
                "x": xs[m],
                "r": rs[m],
                "mean_T": float(ts[m].mean()),
                "sem": float(ts[m].std(ddof=1) / math.sqrt(m.sum())),
                "n": int(m.sum()),
            }
        )
    return out
