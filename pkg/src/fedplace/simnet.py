"""Deterministic discrete-event simulation of federated pipeline placement.

Pipelines arrive as a Poisson stream, each at the broker of its first
stage's home domain.  They are placed by the configured strategy and then executed stage by stage on per-worker
FIFO queues with ``capacity`` parallel servers.  Inter-stage data moves with
sampled link latency.  Failures (worker and broker kills, edge/cloud
partitions, a speed profile change) are injected at scheduled times.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .dag import ConfigError, PipelineTemplate, build_template, topo_order
from .federation import (
    BrokerState,
    FederationConfig,
    MessageTrace,
    mape_epoch,
    on_dispatch_timeout,
    on_price_push_result,
    recovery_probe,
)
from .market import DomainMarket, MarketConfig, ReservationLedger, market_place
from .strategies import (
    RRCursor,
    check_strategy,
    latency_greedy_place,
    locality_place,
    oracle_place,
    rr_place,
    spillover_place,
)
from .topology import (
    EDGE,
    CostWeights,
    GovernancePolicy,
    LatencyModel,
    PlacementDecision,
    Topology,
    TopologySnapshot,
    WorkerSpec,
    default_topology,
    domains_touched,
    eligible,
    heterogeneity_profile,
    placement_cost,
)

FAILURE_KINDS = ("worker-kill", "broker-kill", "partition-start", "partition-end", "heterogeneity-profile")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadConfig:
    lambda_pps: float
    duration_s: float = 840.0
    warmup_s: float = 240.0
    pipeline_kind: str = "cqi-chain"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lambda_pps > 0:
            raise ConfigError("lambda_pps must be > 0")
        if not 0 <= self.warmup_s < self.duration_s:
            raise ConfigError("need 0 <= warmup_s < duration_s")


@dataclass(frozen=True)
class FailureEvent:
    time: float
    kind: str
    target: str = ""

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise ConfigError(f"unknown failure kind {self.kind!r}")


@dataclass(frozen=True)
class FailurePlan:
    events: tuple[FailureEvent, ...] = ()

    def validate(self, duration: float, topo: Topology) -> None:
        open_partition = False
        for ev in sorted(self.events, key=lambda e: e.time):
            if not 0 <= ev.time <= duration:
                raise ConfigError(f"failure at t={ev.time} outside the run window")
            if ev.kind == "partition-start":
                if open_partition:
                    raise ConfigError("nested partitions are not supported")
                open_partition = True
            elif ev.kind == "partition-end":
                if not open_partition:
                    raise ConfigError("partition-end without a matching start")
                open_partition = False
            elif ev.kind == "worker-kill":
                resolve_workers(ev.target, topo)
            elif ev.kind == "broker-kill" and ev.target not in topo.domain_ids:
                raise ConfigError(f"unknown broker {ev.target!r}")


def resolve_workers(target: str, topo: Topology) -> list[int]:
    """``"w3,w7"`` names workers; ``"d3"`` a whole domain; ``"d3:6"`` its first six."""
    out: list[int] = []
    for part in [p.strip() for p in target.split(",") if p.strip()]:
        if part.startswith("w") and part[1:].isdigit():
            wid = int(part[1:])
            if wid not in topo.worker_by_id:
                raise ConfigError(f"unknown worker {part!r}")
            out.append(wid)
            continue
        dom, _, count = part.partition(":")
        if dom not in topo.domain_ids:
            raise ConfigError(f"unknown failure target {part!r}")
        ids = [w.worker_id for w in topo.workers_in(dom)]
        if count:
            if not count.isdigit() or int(count) > len(ids):
                raise ConfigError(f"bad worker count in {part!r}")
            ids = ids[: int(count)]
        out.extend(ids)
    if not out:
        raise ConfigError("worker-kill needs a target")
    return out


@dataclass(frozen=True)
class SimConfig:
    workload: WorkloadConfig
    strategy: str = "market"
    scenario: str = "A"
    failures: FailurePlan = FailurePlan()
    workers_per_domain: int = 12
    capacity: float = 4.0
    base_service_ms: float = 220.0
    deadline_s: float = 10.0
    heterogeneity: bool = False
    latency: LatencyModel = LatencyModel()
    federation: FederationConfig = FederationConfig()
    market: MarketConfig = MarketConfig()
    weights: CostWeights = CostWeights()
    coordinator: str = "d1"
    broker_decision_ms: float = 0.0
    record_trace: bool = False
    load_from_placement: bool = False

    def __post_init__(self) -> None:
        check_strategy(self.strategy)
        if self.workers_per_domain < 1 or self.capacity < 1:
            raise ConfigError("need at least one worker per domain and capacity >= 1")
        if self.base_service_ms <= 0 or self.deadline_s <= 0:
            raise ConfigError("base_service_ms and deadline_s must be > 0")

    def build_topology(self) -> Topology:
        topo = default_topology(self.workers_per_domain, self.capacity, latency=self.latency)
        return heterogeneity_profile(topo) if self.heterogeneity else topo


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

ROW_FIELDS = (
    "pipeline_id", "arrival_time", "strategy", "accepted", "completed",
    "end_to_end_latency_ms", "domains_crossed", "placement_cost", "reject_reason",
)


@dataclass
class RunRow:
    pipeline_id: int
    arrival_time: float
    strategy: str
    accepted: bool
    completed: bool
    end_to_end_latency_ms: float | None
    domains_crossed: int
    placement_cost: float | None
    reject_reason: str | None


@dataclass
class RunRecord:
    rows: list[RunRow]
    meta: dict[str, Any]
    counts: dict[str, int]
    events: list[tuple] = field(default_factory=list)
    messages: MessageTrace = field(default_factory=MessageTrace)

    @property
    def completion_rate(self) -> float:
        return sum(r.completed for r in self.rows) / len(self.rows) if self.rows else float("nan")

    def latencies(self) -> np.ndarray:
        return np.array([r.end_to_end_latency_ms for r in self.rows if r.completed])


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def poisson_arrivals(lam: float, duration: float, rng: np.random.Generator) -> list[float]:
    """Arrival times of a rate-``lam`` Poisson process on [0, duration)."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    out: list[float] = []
    t = 0.0
    if duration <= 0:
        return out
    while True:
        t += rng.exponential(1.0 / lam)
        if t >= duration:
            return out
        out.append(t)


def sample_link_latency(src: WorkerSpec, dst: WorkerSpec, topo: Topology, rng: np.random.Generator) -> float:
    """One-way data transfer latency in ms."""
    same = src.worker_id == dst.worker_id
    return topo.latency.sample(same, topo.same_site(src.domain, dst.domain), rng)


def _domain_latency_sample(a: str, b: str, topo: Topology, rng: np.random.Generator) -> float:
    return topo.latency.sample(False, topo.same_site(a, b), rng)


@dataclass
class _Worker:
    spec: WorkerSpec
    servers: int
    busy: int = 0
    queue: deque = field(default_factory=deque)
    alive: bool = True


@dataclass
class _Pipeline:
    pid: int
    template: PipelineTemplate
    origin: str
    arrival: float
    assignment: dict[int, int] = field(default_factory=dict)
    pending_inputs: dict[int, int] = field(default_factory=dict)
    done_at: dict[int, float] = field(default_factory=dict)
    queued: set = field(default_factory=set)
    running: set = field(default_factory=set)
    held: dict = field(default_factory=dict)  # stage -> worker whose load it counts against
    status: str = "new"  # new | running | completed | failed | rejected
    latency_ms: float | None = None
    accepted: bool = False
    reject_reason: str | None = None
    cost: float | None = None
    crossed: int = 0


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


class Simulation:
    """Single-run event loop; construct, then call :meth:`run`."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.topo = cfg.build_topology()
        cfg.failures.validate(cfg.workload.duration_s, self.topo)
        if cfg.coordinator not in self.topo.domain_ids:
            raise ConfigError(f"unknown coordinator {cfg.coordinator!r}")
        self.template = build_template(cfg.workload.pipeline_kind)
        self.order = topo_order(self.template)
        self.preds = self.template.predecessors()
        self.succ = self.template.successors()
        self.sinks = [s for s in self.order if not self.succ[s]]
        self.gov = GovernancePolicy(cfg.scenario)
        seeds = np.random.SeedSequence(cfg.workload.seed).spawn(2)
        self.rng_arrival = np.random.default_rng(seeds[0])
        self.rng_link = np.random.default_rng(seeds[1])

        self.workers = {w.worker_id: _Worker(w, max(1, int(w.capacity))) for w in self.topo.workers}
        self.loads: dict[int, float] = {wid: 0.0 for wid in self.workers}
        self.alive: dict[int, bool] = {wid: True for wid in self.workers}
        stage_types = tuple({s.stage_type: s for s in self.template.stages}.values())
        self.brokers: dict[str, BrokerState] = {}
        for d in self.topo.domain_ids:
            b = BrokerState(d, self.topo.workers_in(d), cfg.federation, self.gov,
                            loads=self.loads, alive=self.alive, stage_types=stage_types)
            self.brokers[d] = b
        for d, b in self.brokers.items():
            for p in self.topo.domain_ids:
                if p != d:
                    b.add_peer(p)
        self.rr = RRCursor()
        self.partition = False
        self.partition_windows: list[list[float]] = []
        self.pulled: set[str] = set(self.topo.domain_ids)
        self.queue: list = []
        self.seq = 0
        self.now = 0.0
        self.pipelines: dict[int, _Pipeline] = {}
        self.events: list[tuple] = []
        self.messages = MessageTrace(enabled=cfg.record_trace)
        self.dispatches: list[tuple[float, str, str, bool]] = []
        self.counts = {"dispatch_timeouts": 0, "replacements": 0, "cross_site_in_partition": 0}
        self._dead_pending: set[tuple[int, int]] = set()

    # -- event queue ------------------------------------------------------

    def schedule(self, t: float, kind: str, *payload) -> None:
        if t < self.now - 1e-12:
            raise RuntimeError("event scheduled in the past")
        self.seq += 1
        heapq.heappush(self.queue, (t, self.seq, kind, payload))

    def log(self, kind: str, *payload) -> None:
        if self.cfg.record_trace:
            self.events.append((round(self.now, 9), kind, *payload))

    # -- connectivity -----------------------------------------------------

    def site(self, domain: str) -> str:
        return self.topo.site_of[domain]

    def reachable(self, a: str, b: str) -> bool:
        """Whether messages between domains ``a`` and ``b`` get through."""
        return not (self.partition and self.site(a) != self.site(b))

    def broker_for(self, origin: str) -> BrokerState | None:
        b = self.brokers[origin]
        if b.up:
            return b
        # orphaned publishers re-register with the nearest live broker
        live = [d for d in self.topo.domain_ids if self.brokers[d].up and self.reachable(origin, d)]
        if not live:
            return None
        live.sort(key=lambda d: (self.topo.domain_latency(origin, d), d))
        return self.brokers[live[0]]

    def usable(self, wid: int, from_domain: str) -> bool:
        w = self.workers[wid]
        return w.alive and self.brokers[w.spec.domain].up and self.reachable(from_domain, w.spec.domain)

    # -- run --------------------------------------------------------------

    def run(self) -> RunRecord:
        wl = self.cfg.workload
        arrivals = poisson_arrivals(wl.lambda_pps, wl.duration_s, self.rng_arrival)
        # requests enter at the broker owning the source data
        origin = self.template.stage(self.order[0]).home_domain
        for i, t in enumerate(arrivals):
            self.schedule(t, "arrive", i, origin)
        t = 0.0
        while t <= wl.duration_s:
            self.schedule(t, "epoch")
            t += self.cfg.federation.delta_prop
        t = self.cfg.federation.delta_health
        while t <= wl.duration_s + self.cfg.deadline_s:
            self.schedule(t, "health")
            t += self.cfg.federation.delta_health
        for i, ev in enumerate(sorted(self.cfg.failures.events, key=lambda e: (e.time, e.kind))):
            self.schedule(ev.time, "fail", ev)
        end = wl.duration_s + self.cfg.deadline_s + self.cfg.federation.tau_fed + 1.0
        handlers = {
            "arrive": self._on_arrive, "input": self._on_input, "done": self._on_done,
            "deadline": self._on_deadline, "epoch": self._on_epoch, "health": self._on_health,
            "fail": self._on_fail, "dispatch": self._on_dispatch,
        }
        while self.queue and self.queue[0][0] <= end:
            t, _, kind, payload = heapq.heappop(self.queue)
            self.now = t
            handlers[kind](*payload)
        self.now = end
        if self.partition and self.partition_windows:
            self.partition_windows[-1][1] = end
        return self._record()

    # -- arrivals and placement ------------------------------------------

    def _on_arrive(self, pid: int, origin: str) -> None:
        p = _Pipeline(pid, self.template, origin, self.now)
        self.pipelines[pid] = p
        self.schedule(self.now + self.cfg.deadline_s, "deadline", pid)
        broker = self.broker_for(origin)
        if broker is None:
            self._reject(p, "no-broker")
            return
        delay = 0.0
        if broker.domain != origin:
            delay += _domain_latency_sample(origin, broker.domain, self.topo, self.rng_link) / 1000.0
        strategy = self.cfg.strategy
        if strategy == "market":
            dec, extra = self._plan_market(broker, p)
            delay += extra
        elif strategy == "oracle":
            dec = oracle_place(p.template, self._snapshot(None), self.cfg.weights, origin, self.gov)
        elif strategy == "oracle-sharded":
            coord = self.brokers[self.cfg.coordinator]
            if not coord.up or not self.reachable(broker.domain, coord.domain):
                self._reject(p, "coordinator-unreachable")
                return
            if broker.domain != coord.domain:
                delay += _domain_latency_sample(broker.domain, coord.domain, self.topo, self.rng_link) / 1000.0
            dec = oracle_place(p.template, self._snapshot(coord.domain, sharded=True), self.cfg.weights,
                               origin, self.gov)
        elif strategy == "rr-global":
            dec = rr_place(p.template, self._snapshot(None), self.rr, origin, self.gov)
        elif strategy == "locality":
            dec = locality_place(p.template, self._snapshot(broker.domain), broker.domain)
        elif strategy == "latency-greedy":
            dec = latency_greedy_place(p.template, self._snapshot(broker.domain), broker.domain, self.gov)
        else:
            dec = spillover_place(p.template, self._snapshot(broker.domain), broker.domain, self.gov)
        if not dec.accepted:
            self._reject(p, dec.reject_reason or "infeasible")
            return
        p.accepted = True
        p.status = "running"
        p.assignment = dict(dec.assignment)
        p.crossed = dec.domains_crossed
        if self.cfg.load_from_placement:
            for sid in self.order:
                self._hold(p, sid, p.assignment[sid])
        p.cost = placement_cost(p.assignment, p.template, self._snapshot(None), self.cfg.weights)
        delay += self.cfg.broker_decision_ms / 1000.0
        self.schedule(self.now + delay, "dispatch", pid, broker.domain)

    def _reject(self, p: _Pipeline, reason: str) -> None:
        p.status = "rejected"
        p.reject_reason = reason
        self.log("reject", p.pid, reason)

    def _snapshot(self, domain: str | None, sharded: bool = False) -> TopologySnapshot:
        """Planner view.

        ``None`` is the full-visibility view.  With a domain, only workers
        that broker can currently reach are visible; the sharded coordinator
        additionally drops peers whose last pull failed.
        """
        if domain is None:
            visible = None
        else:
            visible = frozenset(
                wid for wid, w in self.workers.items()
                if self.brokers[w.spec.domain].up and self.reachable(domain, w.spec.domain)
                and (not sharded or w.spec.domain in self.pulled or w.spec.domain == domain)
            )
        return TopologySnapshot(self.topo, self.loads, self.alive, visible)

    def _plan_market(self, broker: BrokerState, p: _Pipeline) -> tuple[PlacementDecision, float]:
        timeouts: list[str] = []

        def remote(dom: str, stage):
            peer = self.brokers[dom]
            if dom in timeouts:
                return None
            if not peer.up or not self.reachable(broker.domain, dom):
                timeouts.append(dom)
                on_dispatch_timeout(broker.peers[dom])
                self.counts["dispatch_timeouts"] += 1
                self.messages.log(self.now, broker.domain, dom, "dispatch-timeout", p.pid)
                return None
            self.messages.log(self.now, broker.domain, dom, "remote-assign", (p.pid, stage.stage_id))
            return peer.market().assign(stage, self.cfg.market.utilisation_cap,
                                        self.cfg.market.price_reservations)

        def planner(b: BrokerState, pipe: PipelineTemplate, now: float) -> PlacementDecision:
            return market_place(pipe, b.domain, b.market(), b.peer_signals(now), self.cfg.market, self.gov,
                                remote, self.topo, local_prices=b.clearing)

        decisions, _ = mape_epoch(broker, self.now, [p.template], planner, push=False)
        for b in self.brokers.values():
            b.ledger.commit()
        return decisions[0], len(timeouts) * self.cfg.federation.tau_fed

    # -- execution --------------------------------------------------------

    def _on_dispatch(self, pid: int, from_domain: str) -> None:
        p = self.pipelines[pid]
        if p.status != "running":
            return
        for sid in self.order:
            wid = p.assignment[sid]
            dom = self.workers[wid].spec.domain
            ok = self.usable(wid, from_domain)
            cross = self.site(dom) != self.site(from_domain)
            self.dispatches.append((self.now, from_domain, dom, ok))
            if cross and self.partition and ok:
                self.counts["cross_site_in_partition"] += 1
            if not ok:
                self.counts["dispatch_timeouts"] += 1
                self._fail(p, "dispatch-timeout")
                return
        for sid in self.order:
            p.pending_inputs[sid] = max(1, len(self.preds[sid]))
        origin_dom = p.origin
        for sid in self.order:
            if not self.preds[sid]:
                w = self.workers[p.assignment[sid]].spec
                lat = _domain_latency_sample(origin_dom, w.domain, self.topo, self.rng_link) \
                    if origin_dom != w.domain else self.topo.latency.lan_ms
                self._send(p, sid, w.domain, origin_dom, lat)
        self.log("dispatch", pid, tuple(sorted(p.assignment.items())))

    def _send(self, p: _Pipeline, sid: int, dst_domain: str, src_domain: str, lat_ms: float) -> None:
        """Deliver one input of stage ``sid``; dropped across a partition."""
        if not self.reachable(src_domain, dst_domain):
            return
        self.schedule(self.now + lat_ms / 1000.0, "input", p.pid, sid, p.assignment[sid])

    def _on_input(self, pid: int, sid: int, wid: int) -> None:
        p = self.pipelines[pid]
        if p.status != "running" or p.assignment.get(sid) != wid:
            return
        p.pending_inputs[sid] -= 1
        if p.pending_inputs[sid] > 0:
            return
        w = self.workers[wid]
        if not w.alive:
            self._dead_pending.add((pid, sid))
            return
        self._enqueue(p, sid, w)

    def _hold(self, p: _Pipeline, sid: int, wid: int) -> None:
        if sid not in p.held:
            p.held[sid] = wid
            self.loads[wid] += p.template.stage(sid).demand

    def _release(self, p: _Pipeline, sid: int) -> None:
        wid = p.held.pop(sid, None)
        # a killed worker's load was already zeroed
        if wid is not None and self.workers[wid].alive:
            self.loads[wid] -= p.template.stage(sid).demand

    def _enqueue(self, p: _Pipeline, sid: int, w: _Worker) -> None:
        w.queue.append((p.pid, sid))
        p.queued.add(sid)
        self._hold(p, sid, w.spec.worker_id)
        self._start(w)

    def _service_time(self, w: WorkerSpec) -> float:
        return (self.cfg.base_service_ms * w.speed + self.topo.latency.slice_delay(w.slice)) / 1000.0

    def _start(self, w: _Worker) -> None:
        while w.alive and w.busy < w.servers and w.queue:
            pid, sid = w.queue.popleft()
            p = self.pipelines[pid]
            p.queued.discard(sid)
            if p.status != "running":
                self._release(p, sid)
                continue
            w.busy += 1
            p.running.add(sid)
            self.schedule(self.now + self._service_time(w.spec), "done", pid, sid, w.spec.worker_id)

    def _on_done(self, pid: int, sid: int, wid: int) -> None:
        w = self.workers[wid]
        p = self.pipelines[pid]
        if not w.alive or sid not in p.running or p.assignment.get(sid) != wid:
            return
        w.busy -= 1
        p.running.discard(sid)
        self._release(p, sid)
        if p.status == "running":
            p.done_at[sid] = self.now
            for c in self.succ[sid]:
                dst = self.workers[p.assignment[c]].spec
                self._send(p, c, dst.domain, w.spec.domain, sample_link_latency(w.spec, dst, self.topo, self.rng_link))
            if all(s in p.done_at for s in self.sinks):
                p.status = "completed"
                p.latency_ms = (self.now - p.arrival) * 1000.0
                self.log("complete", pid, round(p.latency_ms, 6))
        self._start(w)

    def _fail(self, p: _Pipeline, reason: str) -> None:
        if p.status != "running":
            return
        p.status = "failed"
        p.reject_reason = reason
        # drop queued stages now; running ones release when they finish
        for sid in list(p.queued):
            w = self.workers[p.assignment[sid]]
            w.queue = deque(x for x in w.queue if x != (p.pid, sid))
        p.queued.clear()
        for sid in list(p.held):
            if sid not in p.running:
                self._release(p, sid)
        self.log("fail", p.pid, reason)

    def _on_deadline(self, pid: int) -> None:
        p = self.pipelines[pid]
        if p.status == "running":
            self._fail(p, "timeout")

    # -- federation -------------------------------------------------------

    def _on_epoch(self) -> None:
        for d in self.topo.domain_ids:
            b = self.brokers[d]
            if not b.up:
                continue
            _, out = mape_epoch(b, self.now, [], lambda *a: None, push=True)
            for msg in out:
                peer = self.brokers[msg.dst]
                ok = peer.up and self.reachable(msg.src, msg.dst)
                self.messages.log(self.now, msg.src, msg.dst, "price" if ok else "price-miss", msg.payload[0])
                if ok:
                    sig, summ = msg.payload
                    peer.peers[msg.src].record(sig, summ)
                on_price_push_result(b.peers[msg.dst], ok, self.cfg.federation.k_miss)
            for pd in sorted(b.peers):
                if not b.peers[pd].healthy:
                    if recovery_probe(b, self.brokers[pd], self.now, self.reachable(d, pd)):
                        self.messages.log(self.now, d, pd, "reinstate")
        coord = self.cfg.coordinator
        self.pulled = {d for d in self.topo.domain_ids
                       if self.brokers[d].up and self.reachable(coord, d)}

    def _on_health(self) -> None:
        """Detect dead workers and re-place their unfinished stages."""
        for pid in sorted(self.pipelines):
            p = self.pipelines[pid]
            if p.status != "running":
                continue
            for sid in self.order:
                if sid in p.done_at:
                    continue
                wid = p.assignment[sid]
                if self.workers[wid].alive:
                    continue
                self._replace(p, sid)
                if p.status != "running":
                    break

    def _replace(self, p: _Pipeline, sid: int) -> None:
        stage = p.template.stage(sid)
        old = self.workers[p.assignment[sid]].spec
        broker = self.broker_for(p.origin)
        if broker is None:
            self._fail(p, "no-broker")
            return
        doms = sorted(self.topo.domain_ids,
                      key=lambda d: (d != old.domain, self.topo.domain_latency(old.domain, d), d))
        new = None
        for d in doms:
            if not self.gov.allows(stage, p.origin, d):
                continue
            if not self.brokers[d].up or not self.reachable(broker.domain, d):
                continue
            got = self.brokers[d].market().assign(stage, self.cfg.market.utilisation_cap,
                                                  self.cfg.market.price_reservations)
            self.brokers[d].ledger.commit()
            if got is not None:
                new = got[0]
                break
        if new is None:
            self._fail(p, "replacement-infeasible")
            return
        self.counts["replacements"] += 1
        p.running.discard(sid)
        p.queued.discard(sid)
        self._release(p, sid)
        p.assignment[sid] = new
        if self.cfg.load_from_placement:
            self._hold(p, sid, new)
        self._dead_pending.discard((p.pid, sid))
        dst = self.workers[new].spec
        preds = self.preds[sid]
        if not preds:
            p.pending_inputs[sid] = 1
            lat = _domain_latency_sample(p.origin, dst.domain, self.topo, self.rng_link) \
                if p.origin != dst.domain else self.topo.latency.lan_ms
            self._send(p, sid, dst.domain, p.origin, lat)
            return
        waiting = [q for q in preds if q not in p.done_at]
        p.pending_inputs[sid] = len(preds)
        for q in preds:
            if q in p.done_at:
                src = self.workers[p.assignment[q]].spec
                self._send(p, sid, dst.domain, src.domain, sample_link_latency(src, dst, self.topo, self.rng_link))
        del waiting

    def _on_fail(self, ev) -> None:
        self.log("failure", ev.kind, ev.target)
        if ev.kind == "worker-kill":
            for wid in resolve_workers(ev.target, self.topo):
                w = self.workers[wid]
                if not w.alive:
                    continue
                w.alive = False
                self.alive[wid] = False
                w.queue.clear()
                w.busy = 0
                self.loads[wid] = 0.0
        elif ev.kind == "broker-kill":
            self.brokers[ev.target].up = False
        elif ev.kind == "partition-start":
            self.partition = True
            self.partition_windows.append([self.now, math.inf])
        elif ev.kind == "partition-end":
            self.partition = False
            self.partition_windows[-1][1] = self.now
        elif ev.kind == "heterogeneity-profile":
            self.topo = heterogeneity_profile(self.topo)
            for w in self.topo.workers:
                self.workers[w.worker_id].spec = w
            for d, b in self.brokers.items():
                b.workers = self.topo.workers_in(d)

    # -- output -----------------------------------------------------------

    def _record(self) -> RunRecord:
        wl = self.cfg.workload
        rows: list[RunRow] = []
        counts = {"accepted": 0, "completed": 0, "failed": 0, "in_flight": 0, "rejected": 0}
        for pid in sorted(self.pipelines):
            p = self.pipelines[pid]
            if p.accepted:
                counts["accepted"] += 1
                key = {"completed": "completed", "failed": "failed"}.get(p.status, "in_flight")
                counts[key] += 1
            else:
                counts["rejected"] += 1
            if not (wl.warmup_s <= p.arrival < wl.duration_s):
                continue
            rows.append(RunRow(
                pipeline_id=pid,
                arrival_time=p.arrival,
                strategy=self.cfg.strategy,
                accepted=p.accepted,
                completed=p.status == "completed",
                end_to_end_latency_ms=p.latency_ms if p.status == "completed" else None,
                domains_crossed=p.crossed,
                placement_cost=p.cost,
                reject_reason=p.reject_reason,
            ))
        counts.update(self.counts)
        meta = {
            "seed": wl.seed, "lambda_pps": wl.lambda_pps, "pipeline_kind": wl.pipeline_kind,
            "scenario": self.cfg.scenario, "strategy": self.cfg.strategy,
            "duration_s": wl.duration_s, "warmup_s": wl.warmup_s,
            "partition_windows": [tuple(w) for w in self.partition_windows],
        }
        return RunRecord(rows, meta, counts, self.events, self.messages)


def run_sim(cfg: SimConfig) -> RunRecord:
    return Simulation(cfg).run()


def quick_config(strategy: str = "market", lam: float = 5.0, kind: str = "cqi-chain", seed: int = 0,
                 duration: float = 90.0, warmup: float = 30.0, **kw) -> SimConfig:
    """Short-window configuration used by demos and tests."""
    return SimConfig(WorkloadConfig(lam, duration, warmup, kind, seed), strategy=strategy, **kw)
