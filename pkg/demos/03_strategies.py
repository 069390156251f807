"""Seven ways to place the same pipeline, on a snapshot and in simulation.

Run:  python3 demos/03_strategies.py
"""

from __future__ import annotations

import numpy as np

from fedplace import (
    GovernancePolicy,
    RRCursor,
    build_template,
    default_topology,
    exhaustive_place,
    latency_greedy_place,
    locality_place,
    oracle_place,
    placement_cost,
    rr_place,
    spillover_place,
)
from fedplace.harness import ScenarioConfig, run_grid
from fedplace.strategies import STRATEGY_NAMES
from fedplace.topology import TopologySnapshot

rng = np.random.default_rng(4)
topo = default_topology()
snap = TopologySnapshot(topo, {w.worker_id: float(rng.uniform(0, 3)) for w in topo.workers})
pipe = build_template("anomaly-sp")

# One snapshot, every offline strategy.  The cost blends link latency,
# congestion and the number of domains touched.
decisions = {
    "oracle": oracle_place(pipe, snap),
    "rr-global": rr_place(pipe, snap, RRCursor()),
    "locality": locality_place(pipe, snap, "d1"),
    "latency-greedy": latency_greedy_place(pipe, snap, "d1"),
    "spillover": spillover_place(pipe, snap, "d1"),
}
for name, dec in decisions.items():
    cost = placement_cost(dec.assignment, pipe, snap) if dec.accepted else float("nan")
    print(f"{name:<15} accepted={dec.accepted!s:<5} domains={dec.domains_crossed} cost={cost:8.2f}")

# Beyond a few thousand candidate assignments the oracle switches from
# enumeration to constructive search plus local moves.  One worker per
# domain gives 4^8 assignments, small enough to check against brute force.
small = TopologySnapshot(default_topology(workers_per_domain=1), {})
print("\noracle vs exhaustive on one worker per domain:",
      round(oracle_place(pipe, small).total_cost, 3), round(exhaustive_place(pipe, small).total_cost, 3))

# Sovereignty scenario D pins local-only stages to their home domain.
gov = GovernancePolicy("D")
dec = oracle_place(pipe, snap, origin="d1", gov=gov)
pinned = [s.stage_id for s in pipe.stages if gov.pinned(s)]
print("pinned stages", pinned, "placed in", sorted({topo.worker_by_id[dec.assignment[s]].domain for s in pinned}))

# Now run them for real: a short simulated window at light load.
cells = [ScenarioConfig(strategy=s, pipeline_kind="anomaly-sp", lambda_pps=5.0, duration_s=60.0, warmup_s=20.0)
         for s in STRATEGY_NAMES]
print("\nsimulated, lambda=5 pps, 40 s window")
for r in run_grid(cells, None, False, parallel=1):
    print(f"  {r.cfg.strategy:<15} CR={r.mean_cr:.3f} mean latency={r.mean_latency:7.1f} ms")
