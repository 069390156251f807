"""Find where round-robin breaks, then compare strategies the way a campaign would.

Run:  python3 demos/05_saturation_and_statistics.py        (about a minute)
"""

from __future__ import annotations

from fedplace.harness import ScenarioConfig, capacity_estimate, fit_window, run_grid
from fedplace.stats import bootstrap_ci, comparison_report, hodges_lehmann, knee_fit, sign_test

base = ScenarioConfig(seeds=(0,), duration_s=60.0, warmup_s=20.0)
cap = capacity_estimate(base)
print(f"packing bound: {cap:.1f} pipelines/s")

# Sweep arrival rates for round-robin.  It ignores load, so it runs clean
# until the pool is truly full and then falls off a cliff.
rates = [round(cap * f, 1) for f in (0.4, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0, 1.2)]
res = run_grid([base.with_(strategy="rr-global", lambda_pps=lam) for lam in rates], None, False, 1)
points = [(r.cfg.lambda_pps, r.mean_cr) for r in res]
for lam, cr in points:
    print(f"  lambda={lam:6.1f}  CR={cr:.3f}  " + "#" * int(40 * cr))

# A continuous two-segment line through the collapsing part of the curve
# locates the knee.  Points past the first near-zero CR are dropped, since
# a flat floor would drag the bend to the right.
fit = knee_fit(fit_window(points), bootstrap_B=200)
print(f"knee = {fit.breakpoint:.1f} pps, bootstrap 95% CI {fit.ci}")

# Paired comparison across cells.  Each pair is one (pipeline, rate) cell;
# a win is a mean latency at least 1 ms lower.
cells = []
for kind in ("cqi-chain", "anomaly-sp", "ran-entangled"):
    for lam in (5.0, 10.0, 20.0):
        for s in ("market", "rr-global"):
            cells.append(base.with_(strategy=s, pipeline_kind=kind, lambda_pps=lam, heterogeneity=True))
res = run_grid(cells, None, False, 1)
market = [r.mean_latency for r in res[0::2]]
rr = [r.mean_latency for r in res[1::2]]
print("\nheterogeneous workers (edge 2x slower, cloud 1.5x faster)")
print(comparison_report("market", "rr-global", market, rr, B=2000))

# The same statistics by hand.
diffs = [m - r for m, r in zip(market, rr)]
print(f"sign test p={sign_test(diffs, 'less'):.2e}  HL={hodges_lehmann(diffs):.1f} ms  "
      f"bootstrap CI={tuple(round(x, 1) for x in bootstrap_ci(diffs, hodges_lehmann, B=2000))}")
