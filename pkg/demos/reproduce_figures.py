"""Produce plot-ready CSVs for the SkipPredict vs DelayPredict comparison.

Drives the same entry points as the `predq` command line: a combined
analytic + simulation sweep over lambda at heavy prediction charges
(c1=3.5, c2=4), then the plotdata splitter, which writes one
<source>_<policy>.csv per curve.  Scaled down from the packaged `fig7b`
preset (predq sweep --config fig7b) so it finishes in seconds.

Output lands in ./demo_out/.
"""

import os

from predq import harness

CONFIG = """\
[experiment]
policies = ["skippredict", "delaypredict"]
cost_model = "external"
sweep = "lambda"
grid = [0.5, 0.7, 0.8, 0.9]

[params]
T = 1.0
L = 1.0
c1 = 3.5
c2 = 4.0

[service]
kind = "exponential"
mean = 1.0

[predictor]
cheap = "uniform"
cheap_alpha = 0.8
expensive = "uniform"
expensive_alpha = 0.2

[sim]
n_jobs = 40000
replications = 5
seed = 7
"""


def main():
    outdir = os.path.join(os.getcwd(), "demo_out")
    os.makedirs(outdir, exist_ok=True)
    cfg_path = os.path.join(outdir, "fig7b_small.toml")
    with open(cfg_path, "w") as fh:
        fh.write(CONFIG)

    results = os.path.join(outdir, "results.csv")
    rc = harness.main(["sweep", "--config", cfg_path, "--out", results])
    if rc != 0:
        raise SystemExit(f"sweep failed with exit code {rc}")

    series_dir = os.path.join(outdir, "plotdata")
    rc = harness.main(["plotdata", results, "--out", series_dir])
    if rc != 0:
        raise SystemExit(f"plotdata failed with exit code {rc}")

    print(f"\nwrote {results}")
    print(f"per-series files in {series_dir}:")
    for name in sorted(os.listdir(series_dir)):
        print(f"  {name}")
    sim_skip = os.path.join(series_dir, "sim_skippredict.csv")
    print(f"\n{os.path.basename(sim_skip)}:")
    with open(sim_skip) as fh:
        print(fh.read().rstrip())
    print("\ncolumns are lambda, total_cost, ci_low, ci_high; the analytic_*")
    print("files carry the same curve with degenerate CIs.  At every lambda")
    print("the delaypredict cost sits below skippredict at these charges.")


if __name__ == "__main__":
    main()
