"""What is the cheapest policy as predictions get more expensive?

Analytic-only sweep of the expensive-prediction charge c2 at lambda = 0.9 on
Exponential(1) service with noisy uniform predictors (alpha 0.8 cheap, 0.2
expensive), external cost model, c1 = 0.5.  Total cost is mean response time
plus the prediction charges actually incurred:

    FCFS predicts nothing, 1bit buys only cheap bits, SPRPT buys an expensive
    prediction for every job, SkipPredict only for jobs flagged long (a z
    fraction), DelayPredict only for jobs that outlive the probation period
    (a z' fraction).

So the c2 slopes are 0, 0, 1, z, z', and the ranking flips as c2 grows.
"""

from predq import (
    DelayPredict,
    Exponential,
    External,
    FCFS,
    OneBit,
    PredictionModel,
    SkipPredict,
    SPRPT,
    UniformPredictor,
    moments,
    overall_means_and_cost,
)

LAM = 0.9
C1 = 0.5
C2_GRID = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]

POLICIES = [
    ("fcfs", FCFS()),
    ("1bit", OneBit(T=1.0)),
    ("sprpt", SPRPT()),
    ("skippredict", SkipPredict(T=1.0)),
    ("delaypredict", DelayPredict(L=1.0)),
]


def main():
    dist = Exponential(1.0)
    pm = PredictionModel(service=dist, cheap=UniformPredictor(0.8),
                         expensive=UniformPredictor(0.2), threshold=1.0)
    cat = moments(dist, pm, params={"T": 1.0, "L": 1.0})

    print(f"external total cost, lambda={LAM}, c1={C1}, uniform predictors")
    header = f"{'c2':>6s}" + "".join(f"{name:>14s}" for name, _ in POLICIES)
    print(header + f"{'cheapest':>14s}")
    for c2 in C2_GRID:
        costs = {}
        for name, policy in POLICIES:
            res = overall_means_and_cost(policy, External(c1=C1, c2=c2),
                                         cat, LAM)
            costs[name] = res["total_cost"]
        winner = min(costs, key=costs.get)
        row = f"{c2:6.1f}" + "".join(f"{costs[n]:14.3f}" for n, _ in POLICIES)
        print(row + f"{winner:>14s}")

    print("\nfcfs and 1bit are flat in c2; sprpt pays it for every job, so")
    print("the prediction-frugal policies take over once c2 is large.")


if __name__ == "__main__":
    main()
