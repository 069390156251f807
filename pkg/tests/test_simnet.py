from __future__ import annotations

import numpy as np
import pytest

from fedplace.dag import ConfigError
from fedplace.simnet import (
    FailureEvent,
    FailurePlan,
    SimConfig,
    Simulation,
    WorkloadConfig,
    poisson_arrivals,
    quick_config,
    resolve_workers,
    run_sim,
)
from fedplace.topology import default_topology


def test_poisson_counts_and_gaps():
    rng = np.random.default_rng(0)
    counts = [len(poisson_arrivals(5.0, 100.0, rng)) for _ in range(200)]
    # mean and variance of a Poisson(500) count
    assert abs(np.mean(counts) - 500) < 5
    assert 0.7 < np.var(counts) / 500 < 1.3
    t = poisson_arrivals(20.0, 500.0, np.random.default_rng(1))
    gaps = np.diff([0.0, *t])
    assert abs(gaps.mean() - 0.05) < 0.002
    assert all(0 <= x < 500 for x in t) and t == sorted(t)


def test_poisson_edge_cases():
    assert poisson_arrivals(3.0, 0.0, np.random.default_rng(0)) == []
    with pytest.raises(ValueError):
        poisson_arrivals(0.0, 10.0, np.random.default_rng(0))


def test_resolve_worker_targets():
    topo = default_topology(workers_per_domain=12)
    d3 = [w.worker_id for w in topo.workers_in("d3")]
    assert resolve_workers("d3", topo) == d3
    assert resolve_workers("d3:6", topo) == d3[:6]
    assert resolve_workers("w0, w5", topo) == [0, 5]
    for bad in ("d9", "d3:13", "w999", "", "d3:x"):
        with pytest.raises(ConfigError):
            resolve_workers(bad, topo)


def test_failure_plan_validation():
    topo = default_topology()
    ok = FailurePlan((FailureEvent(10, "partition-start"), FailureEvent(20, "partition-end")))
    ok.validate(60, topo)
    bad = [
        FailurePlan((FailureEvent(70, "worker-kill", "d3"),)),
        FailurePlan((FailureEvent(5, "partition-end"),)),
        FailurePlan((FailureEvent(1, "partition-start"), FailureEvent(2, "partition-start"))),
        FailurePlan((FailureEvent(1, "broker-kill", "d7"),)),
    ]
    for plan in bad:
        with pytest.raises(ConfigError):
            plan.validate(60, topo)
    with pytest.raises(ConfigError):
        FailureEvent(1, "meteor")


def test_config_validation():
    with pytest.raises(ConfigError):
        WorkloadConfig(0.0)
    with pytest.raises(ConfigError):
        WorkloadConfig(1.0, duration_s=10, warmup_s=10)
    with pytest.raises(ConfigError):
        quick_config(strategy="nope")


@pytest.mark.parametrize("strategy", ["market", "oracle", "rr-global", "locality", "oracle-sharded"])
def test_light_load_completes_everything(strategy):
    rec = run_sim(quick_config(strategy, lam=2.0, duration=40.0, warmup=10.0))
    assert rec.rows and rec.completion_rate == 1.0
    assert all(r.end_to_end_latency_ms > 0 for r in rec.rows)
    assert all(10.0 <= r.arrival_time < 40.0 for r in rec.rows)


def test_every_arrival_is_accounted_for():
    rec = run_sim(quick_config("market", lam=8.0, duration=40.0, warmup=0.0))
    c = rec.counts
    assert c["accepted"] + c["rejected"] == len(rec.rows)
    assert c["completed"] + c["failed"] + c["in_flight"] == c["accepted"]


def test_same_seed_same_trace():
    cfg = quick_config("market", lam=6.0, kind="ran-entangled", duration=30.0, warmup=5.0, record_trace=True)
    a, b = run_sim(cfg), run_sim(cfg)
    assert a.rows == b.rows and a.events == b.events
    assert a.messages.to_csv() == b.messages.to_csv()
    other = run_sim(quick_config("market", lam=6.0, kind="ran-entangled", duration=30.0, warmup=5.0, seed=1))
    assert [r.arrival_time for r in other.rows] != [r.arrival_time for r in a.rows]


def test_partition_blocks_cross_site_dispatch():
    plan = FailurePlan((FailureEvent(20, "partition-start"), FailureEvent(50, "partition-end")))
    for strategy in ("market", "oracle-sharded"):
        rec = run_sim(quick_config(strategy, lam=5.0, duration=70.0, warmup=10.0, failures=plan))
        assert rec.counts["cross_site_in_partition"] == 0
        assert rec.meta["partition_windows"] == [(20.0, 50.0)]


def test_worker_kill_triggers_replacement_and_keeps_running():
    plan = FailurePlan((FailureEvent(20, "worker-kill", "d3"), FailureEvent(20, "worker-kill", "d4:6")))
    rec = run_sim(quick_config("market", lam=5.0, kind="anomaly-sp", duration=60.0, warmup=10.0, failures=plan))
    after = [r for r in rec.rows if r.arrival_time > 25.0]
    assert after and sum(r.completed for r in after) / len(after) > 0.95


def test_broker_kill_reroutes_publishers():
    plan = FailurePlan((FailureEvent(15, "broker-kill", "d1"),))
    rec = run_sim(quick_config("market", lam=3.0, duration=50.0, warmup=5.0, failures=plan))
    late = [r for r in rec.rows if r.arrival_time > 20.0]
    assert late and any(r.completed for r in late)


def test_heterogeneous_topology_builds():
    cfg = SimConfig(WorkloadConfig(2.0, 20.0, 5.0), heterogeneity=True)
    topo = cfg.build_topology()
    assert len({w.speed for w in topo.workers}) > 1


@pytest.mark.parametrize("from_placement", [False, True])
@pytest.mark.parametrize("strategy", ["market", "rr-global", "spillover"])
def test_worker_loads_drain_to_zero(strategy, from_placement):
    plan = FailurePlan((FailureEvent(15, "worker-kill", "d3:6"), FailureEvent(20, "partition-start"),
                        FailureEvent(30, "partition-end")))
    sim = Simulation(quick_config(strategy, lam=25.0, duration=45.0, warmup=5.0, failures=plan,
                                  load_from_placement=from_placement))
    sim.run()
    assert all(p.status != "running" for p in sim.pipelines.values())
    assert max(abs(v) for v in sim.loads.values()) < 1e-9
