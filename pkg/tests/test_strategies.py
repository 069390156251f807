from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedplace.acceptance import random_placement_instance
from fedplace.dag import PIPELINE_KINDS, PipelineTemplate, Slice, Sovereignty, StageEdge, StageSpec, build_template
from fedplace.market import ReservationLedger
from fedplace.strategies import (
    STRATEGY_NAMES,
    RRCursor,
    check_strategy,
    exhaustive_place,
    latency_greedy_place,
    locality_place,
    oracle_place,
    rr_place,
    sharded_oracle_place,
    spillover_place,
)
from fedplace.topology import (
    ConfigError,
    CostWeights,
    GovernancePolicy,
    Topology,
    TopologySnapshot,
    WorkerSpec,
    default_topology,
    placement_cost,
)


def chain(n, **kw):
    return PipelineTemplate("c", tuple(StageSpec(i, f"s{i}", **kw) for i in range(n)),
                            tuple(StageEdge(i, i + 1) for i in range(n - 1)))


def _cost_by_hand(assign, pipe, topo, loads, w=CostWeights()):
    lat = 0.0
    for a, b in pipe.edge_pairs():
        wa, wb = topo.worker_by_id[assign[a]], topo.worker_by_id[assign[b]]
        if wa.worker_id == wb.worker_id:
            continue
        lat += topo.latency.lan_ms if topo.site_of[wa.domain] == topo.site_of[wb.domain] else topo.latency.wan_ms
    util = sum(s.demand / (topo.worker_by_id[assign[s.stage_id]].capacity - loads.get(assign[s.stage_id], 0.0))
               for s in pipe.stages)
    doms = len({topo.worker_by_id[x].domain for x in assign.values()})
    return w.alpha * lat + w.beta * util + w.zeta * doms


def test_placement_cost_examples():
    topo = default_topology(workers_per_domain=2)
    snap = TopologySnapshot(topo, {})
    d1 = topo.workers_in("d1")[0].worker_id
    d3 = topo.workers_in("d3")[0].worker_id
    assert placement_cost({0: d1}, chain(1), snap) == pytest.approx(1.25)
    same = placement_cost({0: d1, 1: d1}, chain(2), snap)
    assert same == pytest.approx(0 + 0.5 + 1)
    split = placement_cost({0: d1, 1: d3}, chain(2), snap)
    assert split == pytest.approx(50 + 0.5 + 2)


def test_placement_cost_requires_total_placement():
    snap = TopologySnapshot(default_topology(workers_per_domain=1), {})
    with pytest.raises(ValueError):
        placement_cost({0: 0}, chain(2), snap)


@given(st.integers(0, 5000))
@settings(max_examples=40, deadline=None)
def test_placement_cost_matches_hand_formula_and_ignores_labels(seed):
    rng = np.random.default_rng(seed)
    pipe, snap = random_placement_instance(rng)
    topo = snap.topology
    assign = {s: topo.workers[int(rng.integers(0, len(topo.workers)))].worker_id for s in pipe.stage_ids}
    got = placement_cost(assign, pipe, snap)
    assert got == pytest.approx(_cost_by_hand(assign, pipe, topo, snap.loads))
    # relabel worker ids by a fixed offset
    shift = {w.worker_id: w.worker_id + 1000 for w in topo.workers}
    topo2 = Topology(topo.domains, tuple(WorkerSpec(shift[w.worker_id], w.domain, w.slice, w.capacity, w.speed,
                                                    w.base_bid) for w in topo.workers), topo.latency)
    snap2 = TopologySnapshot(topo2, {shift[k]: v for k, v in snap.loads.items()})
    assert placement_cost({s: shift[w] for s, w in assign.items()}, pipe, snap2) == pytest.approx(got)


def test_oracle_two_stage_matches_brute_force():
    topo = default_topology(workers_per_domain=2)
    topo = topo.with_workers(topo.workers_in("d3"))
    snap = TopologySnapshot(topo, {})
    pipe = chain(2)
    best = min(placement_cost(dict(enumerate(c)), pipe, snap)
               for c in itertools.product([w.worker_id for w in topo.workers], repeat=2))
    assert oracle_place(pipe, snap).total_cost == pytest.approx(best)
    assert oracle_place(pipe, snap, exact_limit=0).total_cost == pytest.approx(best)


def test_oracle_rejects_when_capacity_short():
    topo = default_topology(workers_per_domain=1, capacity=1.0)
    topo = topo.with_workers(topo.workers_in("d4"))
    dec = oracle_place(chain(3), TopologySnapshot(topo, {}))
    assert not dec.accepted


def test_oracle_greedy_close_to_exhaustive_on_reduced_entangled():
    pipe = build_template("ran-entangled")
    topo = default_topology(workers_per_domain=1, capacity=8.0)
    snap = TopologySnapshot(topo, {})
    exact = exhaustive_place(pipe, snap)
    fast = oracle_place(pipe, snap, exact_limit=0)
    assert exact.accepted and fast.accepted
    assert fast.total_cost <= 1.05 * exact.total_cost


def test_oracle_equals_exhaustive_on_random_small_instances():
    rng = np.random.default_rng(3)
    for _ in range(25):
        pipe, snap = random_placement_instance(rng)
        a, b = exhaustive_place(pipe, snap), oracle_place(pipe, snap)
        assert a.accepted == b.accepted
        if a.accepted:
            assert b.total_cost == pytest.approx(a.total_cost)


def test_rr_cycles_and_persists_cursor():
    topo = default_topology(workers_per_domain=1)
    topo = topo.with_workers(topo.workers[:3])
    snap = TopologySnapshot(topo, {})
    cur = RRCursor()
    dec = rr_place(chain(3), snap, cur)
    ids = [w.worker_id for w in topo.workers]
    assert [dec.assignment[i] for i in range(3)] == ids and cur.position == 0
    dec2 = rr_place(chain(1), snap, cur)
    assert dec2.assignment[0] == ids[0]


def test_rr_skips_workers_below_the_slice():
    topo = default_topology(workers_per_domain=1)
    snap = TopologySnapshot(topo, {})
    urllc = chain(4, slice=Slice.URLLC)
    dec = rr_place(urllc, snap, RRCursor())
    assert all(topo.worker_by_id[w].slice == Slice.URLLC for w in dec.assignment.values())


def test_rr_spreads_evenly():
    topo = default_topology(workers_per_domain=2)
    topo = topo.with_workers(topo.workers_in("d3") + topo.workers_in("d4"))
    snap = TopologySnapshot(topo, {})
    cur = RRCursor()
    counts = {w.worker_id: 0 for w in topo.workers}
    for _ in range(3):
        for w in rr_place(chain(4), snap, cur).assignment.values():
            counts[w] += 1
    assert set(counts.values()) == {3}


def test_locality_stays_home_and_rejects_when_full():
    topo = default_topology(workers_per_domain=2)
    snap = TopologySnapshot(topo, {})
    dec = locality_place(chain(3), snap, "d4")
    assert {topo.worker_by_id[w].domain for w in dec.assignment.values()} == {"d4"}
    full = TopologySnapshot(topo, {w.worker_id: 4.0 for w in topo.workers_in("d4")})
    assert not locality_place(chain(1), full, "d4").accepted


def test_latency_greedy_avoids_wan():
    topo = default_topology(workers_per_domain=2)
    snap = TopologySnapshot(topo, {})
    dec = latency_greedy_place(chain(5), snap, "d3")
    sites = {topo.site_of[topo.worker_by_id[w].domain] for w in dec.assignment.values()}
    assert len(sites) == 1


def test_spillover_moves_to_nearest_peer_when_home_full():
    topo = default_topology(workers_per_domain=2)
    loads = {w.worker_id: 4.0 for w in topo.workers_in("d3")}
    dec = spillover_place(chain(3), TopologySnapshot(topo, loads), "d3")
    # d4 shares the cloud site with d3
    assert {topo.worker_by_id[w].domain for w in dec.assignment.values()} == {"d4"}


def test_heuristics_agree_with_each_other_on_idle_single_domain():
    topo = default_topology(workers_per_domain=4)
    snap = TopologySnapshot(topo, {})
    pipe = chain(3, home_domain="d4")
    a = locality_place(pipe, snap, "d4").assignment
    b = spillover_place(pipe, snap, "d4").assignment
    assert a == b


def test_failed_heuristic_releases_its_reservations():
    topo = default_topology(workers_per_domain=1)
    led = ReservationLedger()
    # two stages fit in d4, the third needs more than anyone has left
    pipe = PipelineTemplate("x", (StageSpec(0, "a", demand=2.0), StageSpec(1, "b", demand=2.0),
                                  StageSpec(2, "c", demand=3.0)), ())
    dec = locality_place(pipe, TopologySnapshot(topo, {}), "d4", led)
    assert not dec.accepted and led.additions == {}


@given(st.integers(0, 2000), st.sampled_from(["oracle", "rr", "locality", "greedy", "spillover"]))
@settings(max_examples=60, deadline=None)
def test_no_strategy_breaks_the_slice_filter(seed, which):
    rng = np.random.default_rng(seed)
    pipe, snap = random_placement_instance(rng)
    origin = snap.topology.workers[0].domain
    fn = {
        "oracle": lambda: oracle_place(pipe, snap),
        "rr": lambda: rr_place(pipe, snap, RRCursor()),
        "locality": lambda: locality_place(pipe, snap, origin),
        "greedy": lambda: latency_greedy_place(pipe, snap, origin),
        "spillover": lambda: spillover_place(pipe, snap, origin),
    }[which]
    dec = fn()
    for sid, wid in dec.assignment.items():
        assert snap.topology.worker_by_id[wid].slice.tier >= pipe.stage(sid).slice.tier


def test_governance_pins_local_only_stages_for_every_strategy():
    topo = default_topology(workers_per_domain=2)
    snap = TopologySnapshot(topo, {})
    gov = GovernancePolicy("D")
    pipe = build_template("cqi-chain")
    pinned = [s.stage_id for s in pipe.stages if s.sovereignty == Sovereignty.LOCAL_ONLY]
    assert pinned
    for dec in (oracle_place(pipe, snap, origin="d1", gov=gov), rr_place(pipe, snap, RRCursor(), "d1", gov),
                latency_greedy_place(pipe, snap, "d1", gov), spillover_place(pipe, snap, "d1", gov)):
        for sid in pinned:
            assert topo.worker_by_id[dec.assignment[sid]].domain == pipe.stage(sid).home_domain


def _split(topo, loads, coordinator):
    own = TopologySnapshot(topo, {w.worker_id: loads[w.worker_id] for w in topo.workers_in(coordinator)})
    pulled = {d: TopologySnapshot(topo, {w.worker_id: loads[w.worker_id] for w in topo.workers_in(d)})
              for d in topo.domain_ids if d != coordinator}
    return own, pulled


@pytest.mark.parametrize("kind", PIPELINE_KINDS)
def test_sharded_equals_oracle_on_fresh_snapshots(kind):
    topo = default_topology()
    rng = np.random.default_rng(len(kind))
    pipe = build_template(kind)
    for _ in range(3):
        loads = {w.worker_id: float(rng.uniform(0, 3.5)) for w in topo.workers}
        own, pulled = _split(topo, loads, "d1")
        full = oracle_place(pipe, TopologySnapshot(topo, loads))
        assert sharded_oracle_place(pipe, own, pulled, "d1").assignment == full.assignment


def test_sharded_excludes_timed_out_peer():
    topo = default_topology()
    loads = {w.worker_id: 0.0 for w in topo.workers}
    own, pulled = _split(topo, loads, "d1")
    pulled["d4"] = None
    dec = sharded_oracle_place(build_template("anomaly-sp"), own, pulled, "d1")
    assert dec.accepted
    assert all(topo.worker_by_id[w].domain != "d4" for w in dec.assignment.values())
    from fedplace.strategies import merge_snapshots
    assert len(merge_snapshots(own, pulled, "d1").workers) == 36


def test_strategy_names():
    assert set(STRATEGY_NAMES) == {"market", "oracle", "oracle-sharded", "rr-global", "locality",
                                   "latency-greedy", "spillover"}
    assert check_strategy("market") == "market"
    with pytest.raises(ConfigError):
        check_strategy("heft")
