"""Domains, workers, latency model, governance policy and placement snapshots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dag import ConfigError, PipelineTemplate, Slice, Sovereignty, StageSpec, slice_allows

EDGE, CLOUD = "edge", "cloud"
DOMAIN_IDS = ("d1", "d2", "d3", "d4")


@dataclass(frozen=True)
class WorkerSpec:
    worker_id: int
    domain: str
    slice: Slice
    capacity: float = 4.0
    speed: float = 1.0
    base_bid: float = 10.0

    def __post_init__(self) -> None:
        if not (self.capacity > 0 and self.speed > 0 and self.base_bid > 0):
            raise ConfigError(f"worker {self.worker_id}: capacity, speed, base_bid must be > 0")
        object.__setattr__(self, "slice", Slice(self.slice))

    @property
    def bid(self) -> float:
        return self.base_bid * self.speed


@dataclass(frozen=True)
class WorkerLoadView:
    worker_id: int
    load: float
    observed_at: float = 0.0
    alive: bool = True


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    site: str
    role: str
    worker_ids: tuple[int, ...]


@dataclass(frozen=True)
class LatencyModel:
    lan_ms: float = 0.5
    wan_ms: float = 50.0
    wan_jitter_ms: float = 5.0
    slice_delay_ms: Mapping[str, float] = field(
        default_factory=lambda: {"URLLC": 1.0, "eMBB": 5.0, "best-effort": 0.0}
    )

    def expected(self, same_worker: bool, same_site: bool) -> float:
        if same_worker:
            return 0.0
        return self.lan_ms if same_site else self.wan_ms

    def sample(self, same_worker: bool, same_site: bool, rng) -> float:
        if same_worker:
            return 0.0
        if same_site:
            return self.lan_ms
        lo = max(0.0, self.wan_ms - self.wan_jitter_ms)
        return float(rng.uniform(lo, self.wan_ms + self.wan_jitter_ms))

    def slice_delay(self, sl: Slice) -> float:
        return float(self.slice_delay_ms[Slice(sl).value])


@dataclass(frozen=True)
class Topology:
    domains: tuple[DomainSpec, ...]
    workers: tuple[WorkerSpec, ...]
    latency: LatencyModel = LatencyModel()

    @cached_property
    def site_of(self) -> dict[str, str]:
        return {d.domain_id: d.site for d in self.domains}

    @cached_property
    def worker_by_id(self) -> dict[int, WorkerSpec]:
        return {w.worker_id: w for w in self.workers}

    @cached_property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(d.domain_id for d in self.domains)

    def workers_in(self, domain: str) -> list[WorkerSpec]:
        return [w for w in self.workers if w.domain == domain]

    def same_site(self, a: str, b: str) -> bool:
        return self.site_of[a] == self.site_of[b]

    def domain_latency(self, a: str, b: str) -> float:
        if a == b:
            return self.latency.lan_ms
        return self.latency.expected(False, self.same_site(a, b))

    def with_workers(self, workers: Iterable[WorkerSpec]) -> "Topology":
        return replace(self, workers=tuple(workers))


def default_topology(
    workers_per_domain: int = 12,
    capacity: float = 4.0,
    base_bid: float = 10.0,
    latency: LatencyModel | None = None,
) -> Topology:
    """Four domains on two sites.

    d1 (DU) URLLC workers, d2 (CU + near-RT RIC) half URLLC / half eMBB,
    d3 (non-RT RIC) eMBB, d4 (SMO) best-effort.
    """
    layout = [
        ("d1", EDGE, "DU"),
        ("d2", EDGE, "CU+nearRT-RIC"),
        ("d3", CLOUD, "nonRT-RIC"),
        ("d4", CLOUD, "SMO"),
    ]
    workers: list[WorkerSpec] = []
    domains: list[DomainSpec] = []
    wid = 0
    for dom, site, role in layout:
        ids = []
        for j in range(workers_per_domain):
            if dom == "d1":
                sl = Slice.URLLC
            elif dom == "d2":
                sl = Slice.URLLC if j < workers_per_domain // 2 else Slice.EMBB
            elif dom == "d3":
                sl = Slice.EMBB
            else:
                sl = Slice.BEST_EFFORT
            workers.append(WorkerSpec(wid, dom, sl, capacity, 1.0, base_bid))
            ids.append(wid)
            wid += 1
        domains.append(DomainSpec(dom, site, role, tuple(ids)))
    return Topology(tuple(domains), tuple(workers), latency or LatencyModel())


def heterogeneity_profile(
    topo: Topology, edge_slowdown: float = 2.0, cloud_speedup: float = 1.5
) -> Topology:
    """Edge workers ``edge_slowdown``x slower, cloud ``cloud_speedup``x faster."""
    out = []
    for w in topo.workers:
        if topo.site_of[w.domain] == EDGE:
            out.append(replace(w, speed=w.speed * edge_slowdown))
        else:
            out.append(replace(w, speed=w.speed / cloud_speedup))
    return topo.with_workers(out)


# ---------------------------------------------------------------------------
# Governance
# ---------------------------------------------------------------------------

SCENARIO_ENFORCERS = {
    "A": frozenset(),
    "B": frozenset({"d1", "d2"}),
    "C": frozenset({"d3", "d4"}),
    "D": frozenset({"d1", "d2", "d3", "d4"}),
}


@dataclass(frozen=True)
class GovernancePolicy:
    """Site-level sovereignty enforcement plus pairwise trust.

    A stage is pinned to its home domain when that domain enforces and the
    stage is tagged local-only or its type is listed in ``local_only_types``.
    """

    scenario: str = "A"
    local_only_types: frozenset[str] = frozenset()
    trust: Mapping[tuple[str, str], float] = field(default_factory=dict)
    min_trust: float = 0.0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIO_ENFORCERS:
            raise ConfigError(f"unknown governance scenario {self.scenario!r}")
        object.__setattr__(self, "local_only_types", frozenset(self.local_only_types))

    def enforces(self, domain: str) -> bool:
        return domain in SCENARIO_ENFORCERS[self.scenario]

    def pinned(self, stage: StageSpec) -> bool:
        if not self.enforces(stage.home_domain):
            return False
        return stage.sovereignty == Sovereignty.LOCAL_ONLY or stage.stage_type in self.local_only_types

    def trust_between(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        return self.trust.get((a, b), self.trust.get((b, a), 1.0))

    def allows(self, stage: StageSpec, origin: str, domain: str) -> bool:
        """Whether a pipeline planned at ``origin`` may put ``stage`` in ``domain``."""
        if self.pinned(stage) and domain != stage.home_domain:
            return False
        return self.trust_between(origin, domain) >= self.min_trust


NO_GOVERNANCE = GovernancePolicy()


# ---------------------------------------------------------------------------
# Snapshots and placement decisions
# ---------------------------------------------------------------------------


@dataclass
class TopologySnapshot:
    """Worker specs plus a (possibly stale) load view, as seen by a planner."""

    topology: Topology
    loads: dict[int, float] = field(default_factory=dict)
    alive: dict[int, bool] = field(default_factory=dict)
    visible: frozenset[int] | None = None

    def load(self, wid: int) -> float:
        return self.loads.get(wid, 0.0)

    def is_alive(self, wid: int) -> bool:
        return self.alive.get(wid, True)

    @property
    def workers(self) -> list[WorkerSpec]:
        ws = [w for w in self.topology.workers if self.is_alive(w.worker_id)]
        if self.visible is not None:
            ws = [w for w in ws if w.worker_id in self.visible]
        return ws

    def latency_matrix(self, workers: Sequence[WorkerSpec]) -> np.ndarray:
        lat = self.topology.latency
        site = self.topology.site_of
        sites = np.array([site[w.domain] for w in workers])
        ids = np.array([w.worker_id for w in workers])
        same_site = sites[:, None] == sites[None, :]
        out = np.where(same_site, lat.lan_ms, lat.wan_ms).astype(float)
        out[ids[:, None] == ids[None, :]] = 0.0
        return out

    def link_latency(self, a: int, b: int) -> float:
        wa = self.topology.worker_by_id[a]
        wb = self.topology.worker_by_id[b]
        return self.topology.latency.expected(
            a == b, self.topology.same_site(wa.domain, wb.domain)
        )


@dataclass
class PlacementDecision:
    assignment: dict[int, int] = field(default_factory=dict)
    total_cost: float = 0.0
    domains_crossed: int = 0
    accepted: bool = True
    reject_reason: str | None = None
    market_cost: float = 0.0

    @classmethod
    def rejected(cls, reason: str) -> "PlacementDecision":
        return cls(accepted=False, reject_reason=reason, total_cost=math.inf)


def eligible(worker: WorkerSpec, stage: StageSpec) -> bool:
    return slice_allows(worker.slice, stage.slice)


def domains_touched(assignment: Mapping[int, int], topo: Topology) -> int:
    return len({topo.worker_by_id[w].domain for w in assignment.values()})


def placement_cost(
    assignment: Mapping[int, int],
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    weights: "CostWeights | None" = None,
) -> float:
    """Weighted latency + utilisation + domain-count cost of a placement.

    Utilisation divides each stage's demand by the worker's residual
    capacity in the snapshot (capacity minus current load).
    """
    w = weights or CostWeights()
    missing = set(pipeline.stage_ids) - set(assignment)
    if missing:
        raise ValueError(f"placement misses stages {sorted(missing)}")
    topo = snapshot.topology
    lat = sum(snapshot.link_latency(assignment[a], assignment[b]) for a, b in pipeline.edge_pairs())
    util = 0.0
    for s in pipeline.stages:
        util += s.demand / residual_capacity(topo.worker_by_id[assignment[s.stage_id]], snapshot)
    return w.alpha * lat + w.beta * util + w.zeta * domains_touched(assignment, topo)


def residual_capacity(worker: WorkerSpec, snapshot: TopologySnapshot) -> float:
    return max(worker.capacity - snapshot.load(worker.worker_id), 1e-9)


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 1.0
    beta: float = 1.0
    zeta: float = 1.0

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.zeta) < 0:
            raise ConfigError("cost weights must be >= 0")
