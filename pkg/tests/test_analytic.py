"""Analytic engine: moment catalog values, load profiles, response formulas,
policy equivalences, and cross-checks against the simulator."""

import math

import numpy as np
import pytest

from predq.analytic import (
    LoadProfile,
    MomentCatalog,
    NonConvergenceError,
    QuadratureConfig,
    SoapComponents,
    integrate,
    job_components,
    mean_response_long,
    mean_response_long_avg,
    mean_response_short,
    moments,
    overall_means_and_cost,
    soap_mean_response,
)
from predq.distributions import (
    Exponential,
    ExponentialPredictor,
    PerfectPredictor,
    PredictionModel,
    Weibull,
)
from predq.policy import (
    DelayPredict,
    External,
    FCFS,
    JobDescriptor,
    OneBit,
    ServerTime,
    SkipPredict,
    SPRPT,
)
from predq.simulator import InstabilityError, SimConfig, run

E1 = math.exp(-1.0)
EXT0 = External()


@pytest.fixture(scope="module")
def cat_perfect(exp_dist, perfect_pm):
    return moments(exp_dist, perfect_pm, params={"T": 1.0, "L": 1.0})


@pytest.fixture(scope="module")
def cat_uniform(exp_dist, uniform_pm):
    return moments(exp_dist, uniform_pm, params={"T": 1.0, "L": 1.0})


@pytest.fixture(scope="module")
def cat_exp_pred(exp_dist, exp_pred_pm):
    return moments(exp_dist, exp_pred_pm, params={"T": 1.0})


@pytest.fixture(scope="module")
def cat_weib(weib_dist):
    pm = PredictionModel(service=weib_dist, cheap=PerfectPredictor(),
                         expensive=PerfectPredictor(), threshold=1.0)
    return moments(weib_dist, pm, params={"T": 1.0})


@pytest.fixture(scope="module")
def cat_nomemo(exp_dist, perfect_pm):
    return moments(exp_dist, perfect_pm, params={"T": 1.0},
                   cfg=QuadratureConfig(memoize=False))


# --- quadrature -----------------------------------------------------------


def test_integrate_basics():
    assert integrate(lambda x: 1.0, 0.0, 1.0) == pytest.approx(1.0, rel=1e-10)
    assert integrate(lambda x: x * x, 0.0, 1.0) == pytest.approx(1.0 / 3.0, rel=1e-10)
    # infinite upper limit through the t = x/(1+x) fold
    val = integrate(lambda x: x * x * math.exp(-x), 0.0, math.inf)
    assert val == pytest.approx(2.0, rel=1e-8)
    assert integrate(lambda x: x, 1.0, 1.0) == 0.0
    # interior kink announced via points
    val = integrate(lambda x: abs(x - 0.3), 0.0, 1.0, points=[0.3])
    assert val == pytest.approx(0.3 ** 2 / 2 + 0.7 ** 2 / 2, rel=1e-10)


def test_integrate_nonconvergence_attaches_estimate():
    with pytest.raises(NonConvergenceError) as ei:
        integrate(lambda x: math.cos(1e6 * x), 0.0, 10.0)
    assert math.isfinite(ei.value.estimate)
    assert ei.value.error > 0


# --- moment catalog -------------------------------------------------------


def test_scalar_moments_exponential_perfect(cat_perfect):
    # exp(1) sizes, exact bit at threshold 1
    assert cat_perfect.z() == pytest.approx(E1, rel=1e-9)
    assert cat_perfect.zshort() == pytest.approx(1.0 - E1, rel=1e-9)
    assert cat_perfect.s1_short() == pytest.approx(1.0 - 2.0 * E1, rel=1e-8)
    assert cat_perfect.s2_short() == pytest.approx(2.0 - 5.0 * E1, rel=1e-8)
    assert cat_perfect.s1_long_all() == pytest.approx(2.0 * E1, rel=1e-8)
    assert cat_perfect.charge(0.5, 2.0) == pytest.approx(0.5 + 2.0 * E1, rel=1e-8)
    # short + long service splits the full mean
    total = cat_perfect.s1_short() + cat_perfect.s1_long_all()
    assert total == pytest.approx(1.0, rel=1e-8)


def test_probation_moments(cat_perfect):
    # E[min(X, 1)] pieces for the probation window
    assert cat_perfect.short1(1.0) == pytest.approx(1.0 - 2.0 * E1, rel=1e-8)
    assert cat_perfect.short2(1.0) == pytest.approx(2.0 - 5.0 * E1, rel=1e-8)
    e_min = cat_perfect.short1(1.0) + 1.0 * cat_perfect.dist.sf(1.0)
    assert e_min == pytest.approx(1.0 - E1, rel=1e-8)


def test_tail_weight_family_limits(cat_perfect, cat_uniform):
    for cat in (cat_perfect, cat_uniform):
        assert cat.q_long(0.0) == pytest.approx(cat.z(), rel=1e-6)
        assert cat.q_long(60.0) == pytest.approx(0.0, abs=1e-6)
        assert cat.q_all(0.0) == pytest.approx(1.0, rel=1e-6)
        assert cat.q_all(60.0) == pytest.approx(0.0, abs=1e-6)
        assert cat.qd(0.0, 1.0) == pytest.approx(cat.dist.sf(1.0), rel=1e-6)
        assert cat.qd(60.0, 1.0) == pytest.approx(0.0, abs=1e-6)


def test_load_families_saturate(cat_perfect):
    assert cat_perfect.s1_long(50.0) == pytest.approx(2.0 * E1, rel=1e-6)
    assert cat_perfect.s1_all(0.0) == pytest.approx(0.0, abs=1e-9)
    assert cat_perfect.s1_all(50.0) == pytest.approx(1.0, rel=1e-6)


def test_load_profile_monotone_and_limits(cat_uniform):
    lp = LoadProfile(cat_uniform, c1=0.2, c2=0.4)
    rs = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 20.0]
    for fam in (lp.outrank_ext, lp.sprpt_ext,
                lambda r: lp.delay_ext(r, 1.0), lp.probation):
        vals = [fam(r) for r in rs[1:]]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:])), fam

    assert lp.outrank_ext(0.0) == pytest.approx(lp.cheap_short(), rel=1e-9)
    assert lp.outrank_ext(50.0) == pytest.approx(lp.total(), rel=1e-5)
    assert lp.sprpt_ext(50.0) == pytest.approx(lp.total(), rel=1e-5)
    assert lp.probation(50.0) == pytest.approx(lp.total(), rel=1e-4)
    assert lp.delay_ext(50.0, 1.0) == pytest.approx(lp.total(), rel=1e-4)

    z = cat_uniform.z()
    assert lp.outrank_srv(1.5) == pytest.approx(
        lp.c1 + lp.c2 * z + lp.outrank_ext(1.5), rel=1e-12)
    assert lp.sprpt_srv(1.5) == pytest.approx(lp.c2 + lp.sprpt_ext(1.5), rel=1e-12)
    sfL = cat_uniform.dist.sf(1.0)
    assert lp.delay_srv(1.5, 1.0) - lp.delay_ext(1.5, 1.0) == pytest.approx(
        lp.c2 * sfL, rel=1e-9)
    assert lp.short_srv() == lp.c1 + lp.cheap_short()
    assert lp.new_long_srv() == lp.bit_cost() + lp.new_long_ext()


# --- FCFS closed forms -----------------------------------------------------


def test_fcfs_known_means(cat_perfect, cat_weib):
    for lam, want in [(0.5, 2.0), (0.8, 5.0)]:
        out = overall_means_and_cost(FCFS(), EXT0, cat_perfect, lam)
        assert out["mean_T_all"] == pytest.approx(want, rel=1e-9)
        assert out["total_cost"] == pytest.approx(want, rel=1e-9)
        assert out["frac_long"] == 0.0
        assert math.isnan(out["mean_T_long"])
    out = overall_means_and_cost(FCFS(), EXT0, cat_weib, 0.5)
    assert out["mean_T_all"] == pytest.approx(4.0, rel=1e-9)


# --- reference point: SkipPredict, external, lambda = 0.5 -------------------


def test_skippredict_external_reference_point(cat_perfect):
    out = overall_means_and_cost(SkipPredict(T=1.0), External(c1=0.5, c2=2.0),
                                 cat_perfect, 0.5)
    s1s, s2s = cat_perfect.s1_short(), cat_perfect.s2_short()
    w = 0.5 * s2s / (2.0 * (1.0 - 0.5 * s1s))
    want_short = w + s1s / cat_perfect.zshort()
    assert out["mean_T_short"] == pytest.approx(want_short, rel=1e-7)
    assert out["mean_T_short"] == pytest.approx(0.4643, abs=1e-3)
    assert out["mean_T_long"] == pytest.approx(3.1507, abs=2e-3)
    assert out["mean_T_all"] == pytest.approx(1.4526, abs=1e-3)
    assert out["frac_long"] == pytest.approx(E1, rel=1e-8)
    charge = 0.5 + 2.0 * E1
    assert out["total_cost"] == pytest.approx(out["mean_T_all"] + charge, rel=1e-12)
    combo = (1 - out["frac_long"]) * out["mean_T_short"] \
        + out["frac_long"] * out["mean_T_long"]
    assert out["mean_T_all"] == pytest.approx(combo, rel=1e-9)


# --- tagged-job template ----------------------------------------------------


def test_soap_fcfs_collapse(cat_perfect):
    comp, x_j = job_components(FCFS(), EXT0, cat_perfect, JobDescriptor(x=1.7))
    assert x_j == 1.7
    assert comp.ex_new(0.0) == 0.0
    # W reduces to the Pollaczek-Khinchine waiting time, residence to x itself
    got = soap_mean_response(comp, x_j, 0.5)
    assert got == pytest.approx(1.0 + 1.7, rel=1e-9)


def test_soap_lambda_zero_is_requirement(cat_perfect):
    d = JobDescriptor(x=2.0, b=0, r=2.0)
    comp, x_j = job_components(SkipPredict(T=1.0), ServerTime(c1=0.01, c2=0.05),
                               cat_perfect, d)
    assert x_j == pytest.approx(2.0 + 0.01 + 0.05, rel=1e-12)
    assert soap_mean_response(comp, x_j, 0.0) == pytest.approx(x_j, rel=1e-9)


def test_soap_instability():
    comp = SoapComponents(lambda a: 2.0, 1.0, 2.0, 0.0)
    with pytest.raises(InstabilityError):
        soap_mean_response(comp, 1.0, 0.6)


@pytest.mark.parametrize("model", [External(c1=0.5, c2=2.0),
                                   ServerTime(c1=0.01, c2=0.05)])
def test_two_codings_agree_on_predicted_long(model, cat_nomemo):
    """The closed-form long-class response and the direct template evaluation
    are independent codings of the same quantity; with memoization off they
    must agree to quadrature accuracy."""
    policy = SkipPredict(T=1.0)
    direct = mean_response_long(policy, model, cat_nomemo, 0.5, 2.0, 2.0)
    comp, x_j = job_components(policy, model, cat_nomemo,
                               JobDescriptor(x=2.0, b=0, r=2.0))
    via_template = soap_mean_response(comp, x_j, 0.5)
    assert abs(direct - via_template) < 1e-6


def test_ex_new_nonincreasing(cat_perfect):
    for policy, model in [
        (SkipPredict(T=1.0), EXT0),
        (SPRPT(), External(c2=2.0)),
        (DelayPredict(L=1.0), EXT0),
        (SkipPredict(T=1.0), ServerTime(c1=0.01, c2=0.05)),
    ]:
        comp, x_j = job_components(policy, model, cat_perfect,
                                   JobDescriptor(x=2.0, b=0, r=2.0))
        ages = np.linspace(0.0, x_j, 40)
        vals = [comp.ex_new(a) for a in ages]
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:])), policy


# --- class means -------------------------------------------------------------


def test_short_mean_approaches_fcfs_for_huge_threshold(exp_dist):
    pm = PredictionModel(service=exp_dist, cheap=PerfectPredictor(),
                         expensive=PerfectPredictor(), threshold=40.0)
    cat = moments(exp_dist, pm, params={"T": 40.0})
    got = mean_response_short(SkipPredict(T=40.0), EXT0, cat, 0.5)
    assert got == pytest.approx(2.0, abs=1e-5)


def test_short_mean_server_free_bit_matches_external(cat_uniform):
    for policy in (OneBit(T=1.0), SkipPredict(T=1.0)):
        ext = mean_response_short(policy, External(c1=7.0, c2=7.0), cat_uniform, 0.6)
        srv = mean_response_short(policy, ServerTime(c1=0.0, c2=0.3), cat_uniform, 0.6)
        assert srv == pytest.approx(ext, rel=1e-12)
    # the probation class never pays prediction time in either model
    ext = mean_response_short(DelayPredict(L=1.0), EXT0, cat_uniform, 0.6)
    srv = mean_response_short(DelayPredict(L=1.0), ServerTime(c2=0.3), cat_uniform, 0.6)
    assert srv == pytest.approx(ext, rel=1e-12)


def test_delaypredict_short_closed_form(cat_perfect, exp_dist, perfect_pm):
    lam = 0.5
    e_min = 1.0 - E1
    e_min2 = 2.0 - 4.0 * E1
    wq = lam * e_min2 / (2.0 * (1.0 - lam * e_min))
    cond_mean = (1.0 - 2.0 * E1) / (1.0 - E1)
    want = wq + cond_mean
    got = mean_response_short(DelayPredict(L=1.0), EXT0, cat_perfect, lam)
    assert got == pytest.approx(want, rel=1e-7)
    assert got == pytest.approx(0.61120, abs=1e-4)

    st = run(DelayPredict(L=1.0), EXT0, exp_dist, perfect_pm,
             SimConfig(lam=lam, n_jobs=100_000, seed=14))
    assert abs(st.mean_T_short - got) < max(3 * st.hw_short, 0.01)


def test_empty_classes_are_nan(cat_perfect):
    assert math.isnan(mean_response_short(SPRPT(), EXT0, cat_perfect, 0.5))
    assert math.isnan(mean_response_long(FCFS(), EXT0, cat_perfect, 0.5, 1.0))


def test_long_mean_lambda_to_zero_is_requirement(cat_perfect):
    assert mean_response_long(SPRPT(), External(c2=2.0), cat_perfect,
                              1e-9, 2.0, 2.0) == pytest.approx(2.0, abs=1e-6)
    assert mean_response_long(DelayPredict(L=1.0), EXT0, cat_perfect,
                              1e-9, 2.0, 2.0) == pytest.approx(2.0, abs=1e-6)
    got = mean_response_long(DelayPredict(L=1.0), ServerTime(c2=0.05),
                             cat_perfect, 1e-9, 2.0, 2.0)
    assert got == pytest.approx(2.05, abs=1e-6)


def test_long_mean_nondecreasing_in_size(cat_perfect):
    for policy, model in [(SkipPredict(T=1.0), EXT0), (SPRPT(), EXT0)]:
        vals = [mean_response_long(policy, model, cat_perfect, 0.7, x, x)
                for x in (1.2, 2.0, 3.0, 5.0)]
        assert all(b >= a for a, b in zip(vals, vals[1:])), policy


def test_prediction_argument_handling(cat_perfect, cat_uniform):
    # point-mass expensive predictor: r defaults to the true size
    a = mean_response_long(SPRPT(), EXT0, cat_perfect, 0.5, 2.0)
    b = mean_response_long(SPRPT(), EXT0, cat_perfect, 0.5, 2.0, 2.0)
    assert a == b
    with pytest.raises(ValueError):
        mean_response_long(SPRPT(), EXT0, cat_uniform, 0.5, 2.0)
    with pytest.raises(ValueError):
        mean_response_long(SPRPT(), EXT0, cat_uniform, 0.5, 2.0, -1.0)
    with pytest.raises(ValueError):
        mean_response_long_avg(DelayPredict(L=1.0), EXT0, cat_perfect, 0.5, 0.5)


def test_long_avg_collapses_for_point_mass(cat_perfect):
    a = mean_response_long_avg(SkipPredict(T=1.0), EXT0, cat_perfect, 0.5, 2.0)
    b = mean_response_long(SkipPredict(T=1.0), EXT0, cat_perfect, 0.5, 2.0, 2.0)
    assert a == pytest.approx(b, rel=1e-12)


# --- instability -------------------------------------------------------------


def test_instability_raised_everywhere(cat_perfect):
    with pytest.raises(InstabilityError):
        overall_means_and_cost(FCFS(), EXT0, cat_perfect, 1.01)
    with pytest.raises(InstabilityError):
        mean_response_short(SkipPredict(T=1.0), EXT0, cat_perfect, 1.2)
    with pytest.raises(InstabilityError):
        mean_response_long(SPRPT(), ServerTime(c2=0.2), cat_perfect, 0.95, 1.0, 1.0)


# --- cost-model and policy equivalences --------------------------------------


def test_zero_cost_models_agree(cat_uniform):
    """With c1 = c2 = 0 the two cost models describe the same system."""
    ext, srv = External(), ServerTime()
    policies = [FCFS(), OneBit(T=1.0), SPRPT(), SkipPredict(T=1.0),
                DelayPredict(L=1.0)]
    for policy in policies:
        a = overall_means_and_cost(policy, ext, cat_uniform, 0.6)
        b = overall_means_and_cost(policy, srv, cat_uniform, 0.6)
        for key in a:
            if math.isnan(a[key]):
                assert math.isnan(b[key])
            else:
                assert abs(a[key] - b[key]) < 1e-5, (policy, key)


def test_skippredict_zero_threshold_is_sprpt(exp_dist):
    """T = 0 predicts every job long, so SkipPredict degenerates to SPRPT
    (equal charge requires a free cheap test)."""
    pm = PredictionModel(service=exp_dist, cheap=PerfectPredictor(),
                         expensive=PerfectPredictor(), threshold=0.0)
    cat = moments(exp_dist, pm)
    rng = np.random.default_rng(99)
    for _ in range(5):
        lam = float(rng.uniform(0.3, 0.8))
        c2 = float(rng.uniform(0.01, 0.15))
        for model_cls in (External, ServerTime):
            skip = overall_means_and_cost(SkipPredict(T=0.0),
                                          model_cls(c1=0.0, c2=c2), cat, lam)
            sprpt = overall_means_and_cost(SPRPT(), model_cls(c1=0.0, c2=c2),
                                           cat, lam)
            assert abs(skip["mean_T_all"] - sprpt["mean_T_all"]) < 1e-4
            assert abs(skip["total_cost"] - sprpt["total_cost"]) < 1e-4
            assert skip["frac_long"] == pytest.approx(1.0, abs=1e-9)


def test_onebit_huge_threshold_is_skippredict(exp_dist):
    # with almost no long jobs the long lanes carry negligible weight, so the
    # two bit policies coincide
    pm = PredictionModel(service=exp_dist, cheap=PerfectPredictor(),
                         expensive=PerfectPredictor(), threshold=15.0)
    cat = moments(exp_dist, pm, params={"T": 15.0})
    rng = np.random.default_rng(7)
    for _ in range(5):
        lam = float(rng.uniform(0.3, 0.75))
        c1 = float(rng.uniform(0.01, 0.15))
        c2 = float(rng.uniform(0.01, 0.3))
        for model_cls in (External, ServerTime):
            ob = overall_means_and_cost(OneBit(T=15.0), model_cls(c1=c1, c2=c2),
                                        cat, lam)
            sk = overall_means_and_cost(SkipPredict(T=15.0),
                                        model_cls(c1=c1, c2=c2), cat, lam)
            assert abs(ob["mean_T_all"] - sk["mean_T_all"]) < 1e-4
            assert abs(ob["total_cost"] - sk["total_cost"]) < 1e-4


def test_memoized_and_exact_paths_agree(exp_dist, uniform_pm):
    cat_fast = moments(exp_dist, uniform_pm, params={"T": 1.0})
    cat_slow = moments(exp_dist, uniform_pm, params={"T": 1.0},
                       cfg=QuadratureConfig(memoize=False))
    lam = 0.7
    a = overall_means_and_cost(SkipPredict(T=1.0), External(c1=0.5, c2=2.0),
                               cat_fast, lam)
    b = overall_means_and_cost(SkipPredict(T=1.0), External(c1=0.5, c2=2.0),
                               cat_slow, lam)
    for key in ("mean_T_short", "mean_T_long", "mean_T_all", "total_cost"):
        assert a[key] == pytest.approx(b[key], abs=2e-4), key


# --- simulator oracles -------------------------------------------------------


def test_sprpt_conditional_mean_vs_sim(exp_dist, perfect_pm, cat_perfect):
    """Conditional response of size-1 jobs under SPRPT at lambda = 0.8: the
    analytic value must sit inside the simulated narrow-window estimate."""
    lam = 0.8
    st = run(SPRPT(), EXT0, exp_dist, perfect_pm,
             SimConfig(lam=lam, n_jobs=200_000, seed=21), collect_pairs=True)
    xs, resp = st.pairs[:, 0], st.pairs[:, 3]
    win = (xs > 0.95) & (xs < 1.05)
    assert win.sum() > 2000
    sim_mean = resp[win].mean()
    sem = resp[win].std(ddof=1) / math.sqrt(win.sum())
    want = mean_response_long(SPRPT(), EXT0, cat_perfect, lam, 1.0, 1.0)
    assert abs(sim_mean - want) < 3.5 * sem + 0.03


def test_long_avg_noisy_predictor_vs_sim(exp_dist, exp_pred_pm, cat_exp_pred):
    """Prediction-averaged long response for size ~= 2 jobs under SkipPredict
    with the multiplicative-noise predictor, against a windowed sim."""
    lam = 0.5
    st = run(SkipPredict(T=1.0), EXT0, exp_dist, exp_pred_pm,
             SimConfig(lam=lam, n_jobs=200_000, seed=33), collect_pairs=True)
    xs, is_long, resp = st.pairs[:, 0], st.pairs[:, 2], st.pairs[:, 3]
    win = (xs > 1.9) & (xs < 2.1) & (is_long == 1.0)
    assert win.sum() > 1000
    sim_mean = resp[win].mean()
    sem = resp[win].std(ddof=1) / math.sqrt(win.sum())
    want = mean_response_long_avg(SkipPredict(T=1.0), EXT0, cat_exp_pred, lam, 2.0)
    assert abs(sim_mean - want) < 3.5 * sem + 0.05
