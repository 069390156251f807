from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedplace.dag import PipelineTemplate, Slice, Sovereignty, StageEdge, StageSpec, build_template
from fedplace.market import (
    DomainMarket,
    MarketConfig,
    PriceSignalMsg,
    ReservationLedger,
    WorkerBid,
    clearing_prices,
    market_place,
    reserve,
    snapshot_remote_assign,
    speed_scaled_bid,
    trade_decision,
    worker_cost,
)
from fedplace.strategies import oracle_place
from fedplace.topology import ConfigError, GovernancePolicy, TopologySnapshot, WorkerSpec, default_topology


def bids(costs, ids=None):
    ids = ids if ids is not None else range(len(costs))
    return [WorkerBid(i, "t", c, c) for i, c in zip(ids, costs)]


def one_stage(stype="t", budget=100.0, **kw):
    return PipelineTemplate("one", (StageSpec(0, stype, **kw),), (), value_budget=budget)


def test_worker_cost_examples():
    assert worker_cost(10, 0, 10) == 10
    assert worker_cost(10, 5, 10) == 20
    assert worker_cost(10, 10, 10) == 1000
    assert worker_cost(10, 250, 10) == 1000


@given(st.floats(0.01, 1e3), st.floats(0.1, 64), st.floats(0, 200), st.floats(0, 200))
@settings(max_examples=300)
def test_worker_cost_monotone_and_bounded(bid, cap, l1, l2):
    lo, hi = sorted((l1, l2))
    c_lo, c_hi = worker_cost(bid, lo, cap), worker_cost(bid, hi, cap)
    assert bid <= c_lo <= c_hi <= 100 * bid * (1 + 1e-12)


def test_speed_scaled_bid():
    assert speed_scaled_bid(10, 1.0) == 10
    assert speed_scaled_bid(10, 2.0) == 20
    assert speed_scaled_bid(10, 1 / 1.5) == pytest.approx(6.6666666667, abs=1e-9)


def test_clearing_price_examples():
    assert clearing_prices({"t": bids([5, 8, 12])}, {"t": 2}).prices["t"] == 8
    assert clearing_prices({"t": bids([10])}, {"t": 5}).prices["t"] == 10
    tab = clearing_prices({"t": bids([7, 7], ids=[2, 1])}, {"t": 1})
    assert tab.prices["t"] == 7 and tab.priced_worker["t"] == 1
    assert clearing_prices({"t": bids([3, 9])}, {"t": 0}).prices["t"] == 3
    assert math.isinf(clearing_prices({}, {"u": 2}).price("u"))


def _dth_by_counting(costs, ids, d):
    # the d-th cheapest has exactly d-1 (cost, id) pairs strictly below it
    for c, i in zip(costs, ids):
        if sum((c2, i2) < (c, i) for c2, i2 in zip(costs, ids)) == d - 1:
            return c
    raise AssertionError


@given(st.lists(st.sampled_from([1.0, 2.0, 2.0, 5.5, 9.0]), min_size=1, max_size=10), st.integers(0, 15),
       st.randoms(use_true_random=False))
@settings(max_examples=200)
def test_clearing_price_is_order_statistic_and_permutation_invariant(costs, demand, rnd):
    ids = list(range(len(costs)))
    d = max(1, min(demand, len(costs)))
    ref = _dth_by_counting(costs, ids, d)
    b = bids(costs, ids)
    assert clearing_prices({"t": b}, {"t": demand}).prices["t"] == ref
    rnd.shuffle(b)
    assert clearing_prices({"t": b}, {"t": demand}).prices["t"] == ref


def test_trade_rule_examples():
    peer = lambda p, dom="d2": PriceSignalMsg(dom, {"t": p}, 0.0)
    assert trade_decision("t", 10, [peer(5)], 3).remote
    assert not trade_decision("t", 10, [peer(7)], 3).remote
    assert not trade_decision("t", 10, [], 3).remote
    # peer tie resolves to the smaller domain id
    got = trade_decision("t", 100, [peer(5, "d4"), peer(5, "d3")], 3)
    assert got.remote and got.domain == "d3"
    # a peer that does not price the type is ignored
    assert not trade_decision("t", 10, [PriceSignalMsg("d2", {"u": 1.0}, 0.0)], 0).remote


def test_price_signal_carries_no_worker_ids():
    sig = PriceSignalMsg("d1", {"t": 4.0}, 0.0)
    assert set(vars(sig)) == {"origin_domain", "prices", "issued_at"}


def test_reserve_examples():
    w = WorkerSpec(0, "d1", Slice.BEST_EFFORT, capacity=4)
    led = ReservationLedger()
    assert reserve(led, w, 0, 1) and led.added(0) == 1
    led2 = ReservationLedger({0: 1.0})
    assert not reserve(led2, w, 3, 1)
    led3 = ReservationLedger()
    got = [reserve(led3, w, 0, 1) for _ in range(8)]
    assert got == [True] * 4 + [False] * 4
    led3.commit()
    assert led3.added(0) == 0
    with pytest.raises(ValueError):
        reserve(led3, w, 0, 0)


@given(st.lists(st.tuples(st.integers(0, 3), st.floats(0.1, 3.0)), max_size=40), st.lists(st.floats(0, 4), min_size=4, max_size=4))
@settings(max_examples=150)
def test_ledger_never_overcommits(requests, loads):
    ws = [WorkerSpec(i, "d1", Slice.BEST_EFFORT, capacity=4) for i in range(4)]
    led = ReservationLedger()
    for wid, dem in requests:
        reserve(led, ws[wid], loads[wid], dem)
    for w in ws:
        assert loads[w.worker_id] + led.added(w.worker_id) <= w.capacity + 1e-9 or led.added(w.worker_id) == 0


def _domain(workers, loads=None):
    return DomainMarket("d1", workers, dict(loads or {}), ReservationLedger())


def test_one_stage_idle_local():
    w = WorkerSpec(0, "d1", Slice.BEST_EFFORT, base_bid=10.0)
    dec = market_place(one_stage(), "d1", _domain([w]), [])
    assert dec.accepted and dec.assignment == {0: 0} and dec.total_cost == 10


def test_congested_local_trades_remote():
    # local price 50 against peer 10 + wan 30 = 40
    w = WorkerSpec(0, "d1", Slice.BEST_EFFORT, capacity=5, base_bid=10.0)
    local = _domain([w], {0: 4.0})
    remote = WorkerSpec(9, "d3", Slice.BEST_EFFORT, base_bid=10.0)
    calls = []

    def remote_assign(dom, stage):
        calls.append(dom)
        return remote.worker_id, 10.0

    sig = [PriceSignalMsg("d3", {"t": 10.0}, 0.0)]
    dec = market_place(one_stage(), "d1", local, sig, MarketConfig(wan_cost=30.0), remote_assign=remote_assign)
    assert dec.accepted and dec.assignment == {0: 9} and calls == ["d3"]
    assert dec.total_cost == 40.0


def test_saturated_pipeline_is_over_budget():
    topo = default_topology(workers_per_domain=1)
    ws = [w for w in topo.workers if w.domain == "d1"]
    chain = PipelineTemplate(
        "c", tuple(StageSpec(i, f"s{i}", demand=0.004) for i in range(8)),
        tuple(StageEdge(i, i + 1) for i in range(7)), value_budget=800.0)
    # rho = 0.99 with just enough room left for all eight stages
    local = _domain(ws, {ws[0].worker_id: 3.96})
    dec = market_place(chain, "d1", local, [])
    assert not dec.accepted and dec.reject_reason == "over-budget"
    # the refused pipeline leaves no reservation behind
    assert local.ledger.additions == {}


def test_infeasible_when_no_worker_fits():
    w = WorkerSpec(0, "d1", Slice.BEST_EFFORT, capacity=1)
    dec = market_place(one_stage(demand=2.0), "d1", _domain([w]), [])
    assert not dec.accepted and dec.reject_reason == "infeasible"


def test_worker_ties_go_to_smallest_id():
    ws = [WorkerSpec(i, "d1", Slice.BEST_EFFORT) for i in (5, 2, 7)]
    dec = market_place(one_stage(), "d1", _domain(ws), [])
    assert dec.assignment == {0: 2}


@given(st.lists(st.floats(0.5, 500), min_size=3, max_size=3), st.floats(0, 50))
@settings(max_examples=100)
def test_local_only_stage_never_leaves_home(peer_prices, wan):
    pinned = PipelineTemplate("p", (StageSpec(0, "t", home_domain="d1", sovereignty=Sovereignty.LOCAL_ONLY),), ())
    gov = GovernancePolicy("D")
    w = WorkerSpec(0, "d1", Slice.BEST_EFFORT, capacity=4)
    local = _domain([w], {0: 3.0})
    sigs = [PriceSignalMsg(d, {"t": p}, 0.0) for d, p in zip(("d2", "d3", "d4"), peer_prices)]
    dec = market_place(pinned, "d1", local, sigs, MarketConfig(wan_cost=wan), gov,
                       remote_assign=lambda d, s: (99, 0.0))
    assert dec.assignment.get(0) == 0


def test_single_domain_uniform_market_matches_oracle():
    topo = default_topology(workers_per_domain=4)
    topo = topo.with_workers(w for w in topo.workers if w.domain == "d3")
    snap = TopologySnapshot(topo, {})
    pipe = PipelineTemplate("c", tuple(StageSpec(i, f"s{i}", home_domain="d3") for i in range(3)),
                            (StageEdge(0, 1), StageEdge(1, 2)))
    dm = DomainMarket("d3", list(topo.workers), {}, ReservationLedger())
    mk = market_place(pipe, "d3", dm, [], MarketConfig(price_reservations=False))
    orc = oracle_place(pipe, snap)
    assert mk.accepted and orc.accepted
    assert len(set(mk.assignment.values())) == len(set(orc.assignment.values()))
    # counting its own reservations, the market spreads the chain instead
    dm = DomainMarket("d3", list(topo.workers), {}, ReservationLedger())
    assert len(set(market_place(pipe, "d3", dm, []).assignment.values())) == 3


def test_snapshot_remote_assign_reserves_in_peer_ledger():
    topo = default_topology(workers_per_domain=2)
    snap = TopologySnapshot(topo, {})
    ledgers = {}
    assign = snapshot_remote_assign(snap, ledgers)
    got = assign("d3", StageSpec(0, "t", slice=Slice.EMBB))
    assert got is not None and ledgers["d3"].added(got[0]) == 1.0


def test_market_config_validation():
    with pytest.raises(ConfigError):
        MarketConfig(wan_cost=-1)
    with pytest.raises(ConfigError):
        MarketConfig(utilisation_cap=1.0)


def test_templates_place_at_idle_topology():
    topo = default_topology()
    snap = TopologySnapshot(topo, {})
    ledgers = {}
    for kind in ("cqi-chain", "anomaly-sp", "ran-entangled"):
        pipe = build_template(kind)
        local = DomainMarket("d1", topo.workers_in("d1"), {}, ReservationLedger())
        sigs = [PriceSignalMsg(d, {s.stage_type: 10.0 for s in pipe.stages}, 0.0) for d in ("d2", "d3", "d4")]
        dec = market_place(pipe, "d1", local, sigs, remote_assign=snapshot_remote_assign(snap, ledgers),
                           topology=topo)
        assert dec.accepted
        for sid, wid in dec.assignment.items():
            assert topo.worker_by_id[wid].slice.tier >= pipe.stage(sid).slice.tier
