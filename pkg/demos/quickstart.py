"""Smallest useful run: one policy, both engines, side by side.

Exponential(1) service at lambda = 0.8, perfect predictions, SkipPredict with
threshold 1.  The analytic engine solves the queue; the simulator replays it
with 200k jobs and reports 95% half-widths.  The two should agree to within
the CI.
"""

from predq import (
    Exponential,
    External,
    PerfectPredictor,
    PredictionModel,
    SimConfig,
    SkipPredict,
    moments,
    overall_means_and_cost,
    run,
    total_cost_ci,
)


def main():
    dist = Exponential(1.0)
    pm = PredictionModel(service=dist, cheap=PerfectPredictor(),
                         expensive=PerfectPredictor(), threshold=1.0)
    policy = SkipPredict(T=1.0)
    model = External(c1=0.5, c2=2.0)
    lam = 0.8

    cat = moments(dist, pm, params={"T": 1.0})
    ana = overall_means_and_cost(policy, model, cat, lam)

    stats = run(policy, model, dist, pm,
                SimConfig(lam=lam, n_jobs=200_000, seed=42))
    sim_cost, cost_hw = total_cost_ci(stats, policy, model, model.c1, model.c2)

    print(f"SkipPredict(T=1), external charges c1=0.5 c2=2, lambda={lam}")
    print(f"{'':14s}{'analytic':>12s}{'simulated':>12s}{'95% hw':>10s}")
    rows = [
        ("E[T] short", ana["mean_T_short"], stats.mean_T_short, stats.hw_short),
        ("E[T] long", ana["mean_T_long"], stats.mean_T_long, stats.hw_long),
        ("E[T] overall", ana["mean_T_all"], stats.mean_T_all, stats.hw_all),
        ("total cost", ana["total_cost"], sim_cost, cost_hw),
    ]
    for name, a, s, hw in rows:
        print(f"{name:14s}{a:12.4f}{s:12.4f}{hw:10.4f}")
    print(f"\nfraction predicted long: analytic {ana['frac_long']:.4f}, "
          f"simulated {stats.frac_long:.4f}")


if __name__ == "__main__":
    main()
