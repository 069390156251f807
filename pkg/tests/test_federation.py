from __future__ import annotations

import math

import numpy as np
import pytest

from fedplace.dag import PipelineTemplate, Slice, StageSpec, build_template
from fedplace.federation import (
    BrokerState,
    Cluster,
    FederationConfig,
    MessageTrace,
    PeerView,
    SubscriptionSummary,
    content_vector,
    dispatch_with_timeout,
    mape_epoch,
    merge_history,
    on_dispatch_timeout,
    on_price_push_result,
    recovery_probe,
    route_publication,
)
from fedplace.market import PriceSignalMsg, market_place
from fedplace.topology import ConfigError, GovernancePolicy, WorkerSpec


def sig(dom, t, price=10.0):
    return PriceSignalMsg(dom, {"x": price}, t)


def broker(domain="d1", workers=None, **kw):
    b = BrokerState(domain, workers if workers is not None else [WorkerSpec(0, domain, Slice.URLLC)], **kw)
    return b


def market_planner(b, pipe, now):
    return market_place(pipe, b.domain, b.market(), b.peer_signals(now))


def test_staleness_bound_and_history_length():
    cfg = FederationConfig()
    assert cfg.staleness_bound == pytest.approx(10.05)
    assert cfg.history_len == math.ceil(10.05 / 10) + 1 == 3
    with pytest.raises(ConfigError):
        FederationConfig(k_miss=0)


def test_push_results_and_eviction():
    v = PeerView("d2")
    v.record(sig("d2", 0.0))
    on_price_push_result(v, False)
    on_price_push_result(v, False)
    on_price_push_result(v, True)
    assert v.healthy and v.consecutive_misses == 0
    for _ in range(3):
        on_price_push_result(v, False)
    assert not v.healthy and v.last_price is None and v.last_summary is None


def test_unhealthy_peer_gets_no_traffic():
    b = broker()
    for d in ("d2", "d3"):
        b.add_peer(d)
        b.peers[d].record(sig(d, 0.0), SubscriptionSummary(d, (Cluster(tuple(content_vector("x")), 1.0, 4.0),)))
    for _ in range(3):
        on_price_push_result(b.peers["d2"], False)
    assert [s.origin_domain for s in b.peer_signals(1.0)] == ["d3"]
    assert route_publication(b, content_vector("x")) == ["d3"]


def test_fresh_price_respects_bound():
    v = PeerView("d2")
    v.record(sig("d2", 0.0))
    assert v.fresh_price(10.05, 10.05) is not None
    assert v.fresh_price(10.06, 10.05) is None


def test_dispatch_timeout_hides_peer_until_heard_from():
    v = PeerView("d2")
    v.record(sig("d2", 0.0))
    on_dispatch_timeout(v)
    assert v.fresh_price(1.0, 10.05) is None and v.healthy
    v.record(sig("d2", 10.0))
    assert v.fresh_price(11.0, 10.05) is not None


def test_history_ring_buffer_keeps_b_seconds():
    v = PeerView("d2", history_len=FederationConfig().history_len)
    for t in (0, 10, 20, 30, 40):
        v.record(sig("d2", float(t)))
    assert [t for t, _ in v.price_history] == [20.0, 30.0, 40.0]


def test_merge_history_is_union_by_timestamp():
    a = [(0.0, sig("d2", 0.0)), (10.0, sig("d2", 10.0))]
    b = [(10.0, sig("d2", 10.0)), (20.0, sig("d2", 20.0))]
    assert [t for t, _ in merge_history(a, b, 5)] == [0.0, 10.0, 20.0]


def _pair():
    a, b = broker("d1"), broker("d3", [WorkerSpec(1, "d3", Slice.EMBB)])
    a.add_peer("d3")
    b.add_peer("d1")
    return a, b


def test_recovery_probe_waits_for_its_epoch_and_reachability():
    a, b = _pair()
    for _ in range(3):
        on_price_push_result(a.peers["d3"], False)
    a.epoch_counter = 12
    assert not recovery_probe(a, b, 120.0, reachable=True)
    a.epoch_counter = 15
    assert not recovery_probe(a, b, 150.0, reachable=False)
    assert not a.peers["d3"].healthy
    assert recovery_probe(a, b, 150.0, reachable=True)
    assert a.peers["d3"].healthy
    # reinstated prices are usable right away
    assert [s.origin_domain for s in a.peer_signals(150.0)] == ["d3"]


def test_dispatch_timeout_fires_at_tau():
    ok = dispatch_with_timeout(100.0, True, 100.0, 5.0)
    assert ok.acked and ok.at == pytest.approx(100.1)
    dead = dispatch_with_timeout(100.0, False, 100.0, 5.0)
    assert not dead.acked and dead.at == 105.0


def test_route_publication_orders_by_distance_and_filters_trust():
    b = broker(governance=GovernancePolicy(trust={("d1", "d2"): 0.2}))
    x = content_vector("x")
    near = Cluster(tuple(x), 1.0, 4.0)
    farther = Cluster(tuple(x + 0.3), 1.0, 4.0)
    for d, c in (("d2", near), ("d3", farther), ("d4", near)):
        b.add_peer(d)
        b.peers[d].record(sig(d, 0.0), SubscriptionSummary(d, (c,)))
    assert route_publication(b, x) == ["d2", "d4", "d3"]
    assert route_publication(b, x, min_trust=0.5) == ["d4", "d3"]
    empty = SubscriptionSummary("d4", (Cluster(tuple(x), 1.0, 0.0),))
    b.peers["d4"].record(sig("d4", 1.0), empty)
    assert "d4" not in route_publication(b, x)
    for d in b.peers:
        for _ in range(3):
            on_price_push_result(b.peers[d], False)
    assert route_publication(b, x) == []


def test_content_vectors_are_fixed_unit_vectors():
    v = content_vector("RIC:predict")
    assert v.shape == (8,) and np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, content_vector("RIC:predict"))
    assert not np.allclose(v, content_vector("RIC:alert"))


def test_mape_empty_inbox_still_pushes():
    b = broker()
    b.add_peer("d2")
    decisions, out = mape_epoch(b, 0.0, [], market_planner)
    assert decisions == [] and [o.kind for o in out] == ["price"]
    assert b.epoch_counter == 1


def test_mape_single_pipeline_commits_ledger():
    b = broker(stage_types=(StageSpec(0, "x"),))
    pipe = PipelineTemplate("one", (StageSpec(0, "x"),), ())
    decisions, _ = mape_epoch(b, 0.0, [pipe], market_planner)
    assert len(decisions) == 1 and decisions[0].accepted
    assert b.ledger.additions == {}


def test_mape_never_double_books_a_worker():
    b = broker(workers=[WorkerSpec(0, "d1", Slice.URLLC, capacity=1.0)], stage_types=(StageSpec(0, "x"),))
    pipe = PipelineTemplate("one", (StageSpec(0, "x"),), ())
    decisions, _ = mape_epoch(b, 0.0, [pipe, pipe], market_planner)
    assert [d.accepted for d in decisions] == [True, False]


def test_mape_prices_use_round_demand():
    ws = [WorkerSpec(i, "d1", Slice.URLLC, base_bid=10.0 + i) for i in range(3)]
    b = broker(workers=ws, stage_types=(StageSpec(0, "x"),))
    pipe = PipelineTemplate("two", (StageSpec(0, "x"), StageSpec(1, "x")), ())
    mape_epoch(b, 0.0, [pipe], market_planner)
    # two stages of type x this round: the second-cheapest bid sets the price
    assert b.clearing.prices["x"] == 11.0


def test_message_trace_csv():
    tr = MessageTrace()
    tr.log(1.0, "d1", "d2", "price", {"x": 1})
    text = tr.to_csv()
    assert text.splitlines()[0] == "time,from,to,kind,payload_digest"
    assert len(text.splitlines()) == 2
    off = MessageTrace(enabled=False)
    off.log(1.0, "d1", "d2", "price")
    assert off.rows == []


def test_summary_reports_spare_capacity_per_type():
    b = broker(workers=[WorkerSpec(0, "d1", Slice.URLLC, capacity=4.0)],
               stage_types=tuple(build_template("cqi-chain").stages[:2]))
    b.loads = {0: 1.5}
    s = b.summary(0.0)
    assert [c.capacity for c in s.clusters] == [2.5, 2.5]
