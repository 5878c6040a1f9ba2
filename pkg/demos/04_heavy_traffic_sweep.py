"""Watching diffusion scaling converge: a miniature sweep.

A critically loaded M/M/1 station is simulated at increasing scales n,
the marginals X^n(1) = Q(n)/sqrt(n) are compared against samples of the
reflected Brownian limit, and the Kolmogorov-Smirnov distance shrinks
as n grows.  This is a desk-scale version of the full experiment; the
same config dict, written as JSON, drives `heavyq run config.json`.
"""

import math

from heavyq.harness import build_report, parse_config, run_scaling_sweep

config = parse_config({
    "topology": {"routing": [[0.0]], "arrival_stations": [1]},
    "rates": {
        "arrival_base": [{"kind": "constant", "value": 1.0}],
        "service_base": [{"kind": "constant", "value": 1.0}],
    },
    "primitives": {
        "arrival": [{"distribution": "exponential", "mean": 1.0}],
        "service": [{"distribution": "exponential", "mean": 1.0}],
    },
    "scaling": {"convention": "conventional", "levels": [25, 100, 400]},
    "experiment": {"horizon": 1.0, "replications": 2000, "seed": 12,
                   "eval_times": [1.0], "statistics": ["mean", "ks"]},
    "output": {"limit_dt": 1e-3, "limit_paths": 10_000},
})

print("running", len(config.levels), "levels x", config.replications, "replications ...")
report = build_report(run_scaling_sweep(config, progress=print))

target = 2 / math.sqrt(math.pi)
print(f"\nlimit mean target E X(1) = 2/sqrt(pi) = {target:.4f}")
print(f"{'n':>6} {'mean':>8} {'KS':>8} {'1% crit':>8}")
for row in report.rows:
    print(f"{row.n:>6} {row.mean:>8.4f} {row.ks:>8.4f} {row.ks_critical_1pct:>8.4f}")
print("\nsampled limit mean:", round(float(report.limit_mean[0, 0]), 4))
