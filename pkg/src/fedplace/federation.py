"""Per-domain broker state and the federation protocol between brokers.

Each broker runs a monitor/analyse/plan/execute loop over shared knowledge
(MAPE-K).  Brokers exchange price signals and subscription summaries every
``delta_prop`` seconds, track peer liveness from push outcomes, evict peers
after ``k_miss`` consecutive misses and reinstate them through periodic
recovery probes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dag import ConfigError, PipelineTemplate
from .market import (
    ClearingPriceTable,
    DomainMarket,
    PriceSignalMsg,
    ReservationLedger,
    make_bids,
    clearing_prices,
)
from .strategies import RRCursor
from .topology import NO_GOVERNANCE, GovernancePolicy, PlacementDecision, WorkerSpec

CONTENT_DIM = 8


@dataclass(frozen=True)
class FederationConfig:
    delta_prop: float = 10.0
    delta_health: float = 5.0
    tau_fed: float = 5.0
    k_miss: int = 3
    wan_max_ms: float = 50.0
    recovery_probe_every: int = 5
    distance_threshold: float = 1e-6

    def __post_init__(self) -> None:
        if min(self.delta_prop, self.delta_health, self.tau_fed) <= 0:
            raise ConfigError("federation periods must be > 0")
        if self.k_miss < 1 or self.recovery_probe_every < 1:
            raise ConfigError("k_miss and recovery_probe_every must be >= 1")

    @property
    def staleness_bound(self) -> float:
        """B in seconds: one exchange period plus the worst WAN delay."""
        return self.delta_prop + self.wan_max_ms / 1000.0

    @property
    def history_len(self) -> int:
        return math.ceil(self.staleness_bound / self.delta_prop) + 1


def content_vector(stage_type: str) -> np.ndarray:
    """Fixed synthetic embedding for a stage type (unit norm)."""
    rng = np.random.default_rng(zlib.crc32(stage_type.encode()))
    v = rng.normal(size=CONTENT_DIM)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Cluster:
    centroid: tuple[float, ...]
    radius: float
    capacity: float

    def __post_init__(self) -> None:
        if self.radius < 0 or self.capacity < 0:
            raise ValueError("radius and capacity must be >= 0")


@dataclass(frozen=True)
class SubscriptionSummary:
    origin_domain: str
    clusters: tuple[Cluster, ...]
    issued_at: float = 0.0


@dataclass
class PeerView:
    peer_domain: str
    history_len: int = 3
    last_price: PriceSignalMsg | None = None
    last_summary: SubscriptionSummary | None = None
    consecutive_misses: int = 0
    healthy: bool = True
    price_history: deque = field(default_factory=deque)
    # set by a dispatch timeout, cleared by the next price that gets through
    suspect: bool = False

    def __post_init__(self) -> None:
        self.price_history = deque(self.price_history, maxlen=self.history_len)

    def record(self, msg: PriceSignalMsg, summary: SubscriptionSummary | None = None) -> None:
        self.last_price = msg
        self.suspect = False
        if summary is not None:
            self.last_summary = summary
        self.price_history.append((msg.issued_at, msg))

    def fresh_price(self, now: float, bound: float) -> PriceSignalMsg | None:
        """The last price if the peer is healthy and the price is within ``bound`` seconds."""
        if not self.healthy or self.suspect or self.last_price is None:
            return None
        if now - self.last_price.issued_at > bound + 1e-9:
            return None
        return self.last_price


def on_price_push_result(view: PeerView, success: bool, k_miss: int = 3) -> PeerView:
    if success:
        view.consecutive_misses = 0
        view.healthy = True
        return view
    view.consecutive_misses += 1
    if view.consecutive_misses >= k_miss and view.healthy:
        view.healthy = False
        view.last_price = None
        view.last_summary = None
    return view


def on_dispatch_timeout(view: PeerView) -> PeerView:
    """A peer that missed a dispatch ack is not offered work until it is heard from again."""
    view.suspect = True
    return view


def merge_history(a: Iterable[tuple[float, PriceSignalMsg]], b: Iterable[tuple[float, PriceSignalMsg]],
                  maxlen: int) -> deque:
    seen = {}
    for t, m in [*a, *b]:
        seen[(t, m.origin_domain)] = (t, m)
    merged = sorted(seen.values(), key=lambda x: (x[0], x[1].origin_domain))
    return deque(merged, maxlen=maxlen)


@dataclass
class MessageTrace:
    rows: list[tuple[float, str, str, str, str]] = field(default_factory=list)
    enabled: bool = True

    def log(self, t: float, src: str, dst: str, kind: str, payload: object = "") -> None:
        if self.enabled:
            digest = hashlib.sha1(repr(payload).encode()).hexdigest()[:12]
            self.rows.append((round(t, 6), src, dst, kind, digest))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "from", "to", "kind", "payload_digest"])
        w.writerows(self.rows)
        return buf.getvalue()


@dataclass
class BrokerState:
    domain: str
    workers: list[WorkerSpec]
    config: FederationConfig = FederationConfig()
    governance: GovernancePolicy = NO_GOVERNANCE
    peers: dict[str, PeerView] = field(default_factory=dict)
    loads: dict[int, float] = field(default_factory=dict)
    alive: dict[int, bool] = field(default_factory=dict)
    clearing: ClearingPriceTable | None = None
    ledger: ReservationLedger = field(default_factory=ReservationLedger)
    rr_cursor: RRCursor = field(default_factory=RRCursor)
    epoch_counter: int = 0
    stage_types: tuple = ()
    up: bool = True

    def add_peer(self, domain: str) -> None:
        self.peers[domain] = PeerView(domain, self.config.history_len)

    @property
    def live_workers(self) -> list[WorkerSpec]:
        return [w for w in self.workers if self.alive.get(w.worker_id, True)]

    def market(self) -> DomainMarket:
        return DomainMarket(self.domain, self.live_workers, self.loads, self.ledger)

    def healthy_peers(self) -> list[str]:
        return sorted(d for d, v in self.peers.items() if v.healthy)

    def peer_signals(self, now: float) -> list[PriceSignalMsg]:
        out = []
        for d in sorted(self.peers):
            p = self.peers[d].fresh_price(now, self.config.staleness_bound)
            if p is not None:
                out.append(p)
        return out

    def analyse(self, now: float, demand: Mapping[str, int] | None = None) -> ClearingPriceTable:
        """Recompute clearing prices for every known stage type.

        ``demand`` is the per-type stage count of the current round; types
        without demand price at their cheapest bid.
        """
        ws = self.live_workers
        bids = {s.stage_type: make_bids(ws, self.loads, s.stage_type, s) for s in self.stage_types}
        self.clearing = clearing_prices(bids, demand or {}, now)
        return self.clearing

    def price_signal(self, now: float) -> PriceSignalMsg:
        table = self.clearing or self.analyse(now)
        return PriceSignalMsg(self.domain, dict(sorted(table.prices.items())), now)

    def summary(self, now: float) -> SubscriptionSummary:
        clusters = []
        for s in self.stage_types:
            cap = sum(max(0.0, w.capacity - self.loads.get(w.worker_id, 0.0))
                      for w in self.live_workers if w.slice.tier >= s.slice.tier)
            clusters.append(Cluster(tuple(content_vector(s.stage_type)), self.config.distance_threshold, cap))
        return SubscriptionSummary(self.domain, tuple(clusters), now)


def recovery_probe(broker: BrokerState, peer: BrokerState, now: float, reachable: bool) -> bool:
    """Probe an unhealthy peer; on success reinstate it and swap price history."""
    view = broker.peers[peer.domain]
    if view.healthy or broker.epoch_counter % broker.config.recovery_probe_every != 0:
        return False
    if not reachable or not peer.up:
        return False
    view.healthy = True
    view.consecutive_misses = 0
    own = (broker.peers.get(peer.domain) or view).price_history
    theirs = peer.peers[broker.domain].price_history if broker.domain in peer.peers else ()
    view.price_history = merge_history(own, theirs, view.history_len)
    msg = peer.price_signal(now)
    view.record(msg, peer.summary(now))
    back = peer.peers.get(broker.domain)
    if back is not None:
        back.healthy = True
        back.consecutive_misses = 0
        back.record(broker.price_signal(now), broker.summary(now))
    return True


@dataclass(frozen=True)
class DispatchResult:
    acked: bool
    at: float


def dispatch_with_timeout(now: float, reachable: bool, rtt_ms: float, tau_fed: float) -> DispatchResult:
    """Simulated RPC: ack after the round trip, or a timeout at exactly ``tau_fed``."""
    if reachable and rtt_ms / 1000.0 <= tau_fed:
        return DispatchResult(True, now + rtt_ms / 1000.0)
    return DispatchResult(False, now + tau_fed)


def route_publication(
    broker: BrokerState,
    content: np.ndarray,
    min_trust: float = 0.0,
    threshold: float | None = None,
) -> list[str]:
    """Healthy peers whose summaries cover ``content``, nearest first."""
    thr = broker.config.distance_threshold if threshold is None else threshold
    ranked = []
    for d in sorted(broker.peers):
        v = broker.peers[d]
        if not v.healthy or v.last_summary is None:
            continue
        if broker.governance.trust_between(broker.domain, d) < min_trust:
            continue
        best = math.inf
        for c in v.last_summary.clusters:
            if c.capacity <= 0:
                continue
            dist = float(np.linalg.norm(np.asarray(c.centroid) - content))
            if dist <= max(thr, c.radius) + 1e-9:
                best = min(best, dist)
        if not math.isinf(best):
            ranked.append((best, d))
    ranked.sort()
    return [d for _, d in ranked]


Planner = Callable[[BrokerState, PipelineTemplate, float], PlacementDecision]


@dataclass(frozen=True)
class Outbound:
    src: str
    dst: str
    kind: str
    payload: object


def mape_epoch(
    broker: BrokerState,
    now: float,
    inbox: Sequence[PipelineTemplate],
    planner: Planner,
    monitor: Mapping[int, float] | None = None,
    push: bool = True,
) -> tuple[list[PlacementDecision], list[Outbound]]:
    """One control-loop step.

    Monitor refreshes the load view, Analyse recomputes clearing prices,
    Plan runs ``planner`` on each pipeline in arrival order, Execute emits a
    price push to every peer, Knowledge commits the reservation ledger.
    """
    if monitor is not None:
        broker.loads = dict(monitor)
    demand: dict[str, int] = {}
    for p in inbox:
        for s in p.stages:
            demand[s.stage_type] = demand.get(s.stage_type, 0) + 1
    broker.analyse(now, demand)
    decisions = [planner(broker, p, now) for p in inbox]
    out: list[Outbound] = []
    if push:
        sig = broker.price_signal(now)
        summ = broker.summary(now)
        for d in sorted(broker.peers):
            out.append(Outbound(broker.domain, d, "price", (sig, summ)))
        broker.epoch_counter += 1
    broker.ledger.commit()
    return decisions, out
