"""Pipeline DAGs: stage/edge types, built-in templates, ordering and structure.

Three built-in 8-stage templates are registered under versioned names so
that CSV output stays stable across releases:

* ``cqi-chain``      linear chain across the four domains (tree)
* ``anomaly-sp``     four sources fanning into a fusion stage (series-parallel)
* ``ran-entangled``  fan-out/fan-in with a diamond (general DAG)
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Iterable, Sequence

TEMPLATE_REGISTRY_VERSION = "1"

DEFAULT_BASE_BID = 10.0
DEFAULT_BUDGET_MULTIPLIER = 10.0


class ConfigError(ValueError):
    """Invalid configuration value (unknown name, bad parameter)."""


class StructuralError(ValueError):
    """Graph violates a structural precondition (cycle, bad endpoint...)."""


class Slice(str, Enum):
    URLLC = "URLLC"
    EMBB = "eMBB"
    BEST_EFFORT = "best-effort"

    @property
    def tier(self) -> int:
        return _TIERS[self.value]


_TIERS = {"URLLC": 2, "eMBB": 1, "best-effort": 0}


def slice_allows(worker_slice: Slice, stage_slice: Slice) -> bool:
    """A worker serves stages of its own QoS tier or any lower tier."""
    return _TIERS[worker_slice] >= _TIERS[stage_slice]


class Sovereignty(str, Enum):
    FREE = "free"
    LOCAL_ONLY = "local-only"


@dataclass(frozen=True)
class StageSpec:
    stage_id: int
    stage_type: str
    demand: float = 1.0
    output_rate: float = 1.0
    home_domain: str = "d1"
    slice: Slice = Slice.BEST_EFFORT
    sovereignty: Sovereignty = Sovereignty.FREE

    def __post_init__(self) -> None:
        if not self.demand > 0:
            raise ConfigError(f"stage {self.stage_id}: demand must be > 0")
        if self.output_rate < 0:
            raise ConfigError(f"stage {self.stage_id}: output_rate must be >= 0")
        object.__setattr__(self, "slice", Slice(self.slice))
        object.__setattr__(self, "sovereignty", Sovereignty(self.sovereignty))


@dataclass(frozen=True)
class StageEdge:
    src: int
    dst: int
    latency_bound: float = math.inf

    def __post_init__(self) -> None:
        if not self.latency_bound > 0:
            raise ConfigError("latency_bound must be > 0 when present")


@dataclass(frozen=True)
class PipelineTemplate:
    kind: str
    stages: tuple[StageSpec, ...]
    edges: tuple[StageEdge, ...]
    value_budget: float = 8 * DEFAULT_BUDGET_MULTIPLIER * DEFAULT_BASE_BID

    def __post_init__(self) -> None:
        ids = [s.stage_id for s in self.stages]
        if len(set(ids)) != len(ids):
            raise StructuralError("stage_id must be unique within a template")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise StructuralError(f"edge {e.src}->{e.dst} references unknown stage")
        # raises on cycles
        topo_order(self)

    @property
    def stage_ids(self) -> list[int]:
        return [s.stage_id for s in self.stages]

    def stage(self, stage_id: int) -> StageSpec:
        for s in self.stages:
            if s.stage_id == stage_id:
                return s
        raise KeyError(stage_id)

    def predecessors(self) -> dict[int, list[int]]:
        preds: dict[int, list[int]] = {s.stage_id: [] for s in self.stages}
        for e in self.edges:
            preds[e.dst].append(e.src)
        return {k: sorted(v) for k, v in preds.items()}

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {s.stage_id: [] for s in self.stages}
        for e in self.edges:
            succ[e.src].append(e.dst)
        return {k: sorted(v) for k, v in succ.items()}

    def edge_pairs(self) -> list[tuple[int, int]]:
        return [(e.src, e.dst) for e in self.edges]

    def total_demand(self) -> float:
        return sum(s.demand for s in self.stages)


# ---------------------------------------------------------------------------
# Built-in templates
# ---------------------------------------------------------------------------

_BE, _EM = Slice.BEST_EFFORT, Slice.EMBB
_LOCAL = Sovereignty.LOCAL_ONLY

# (stage_type, home_domain, slice, sovereignty)
_CQI_STAGES = [
    ("DU:raw_cqi", "d1", _BE, _LOCAL),
    ("DU:denoise", "d1", _EM, None),
    ("CU:normalise", "d2", _EM, None),
    ("CU:feature_extract", "d2", _EM, None),
    ("RIC:predict", "d2", _EM, None),
    ("RIC:validate", "d2", _EM, None),
    ("nRT:aggregate", "d3", _BE, None),
    ("SMO:report", "d4", _BE, None),
]
_CQI_EDGES = [(i, i + 1) for i in range(7)]

_ANOMALY_STAGES = [
    ("DU:kpi_source_a", "d1", _BE, _LOCAL),
    ("DU:kpi_source_b", "d1", _BE, _LOCAL),
    ("CU:kpi_source_a", "d2", _EM, None),
    ("CU:kpi_source_b", "d2", _EM, None),
    ("RIC:fusion", "d2", _EM, None),
    ("RIC:classify", "d2", _EM, None),
    ("RIC:alert", "d2", _EM, None),
    ("RIC:log", "d2", _BE, None),
]
_ANOMALY_EDGES = [(0, 4), (1, 4), (2, 4), (3, 4), (4, 5), (5, 6), (6, 7)]

_ENTANGLED_STAGES = [
    ("DU:raw_kpi", "d1", _BE, _LOCAL),
    ("CU:feature_extract", "d2", _EM, None),
    ("RIC:cqi_predict", "d2", _EM, None),
    ("RIC:anomaly_detect", "d2", _EM, None),
    ("RIC:alert", "d2", _EM, None),
    ("nRT:trend_aggregate", "d3", _BE, None),
    ("SMO:handover_optimise", "d4", _BE, None),
    ("SMO:report", "d4", _BE, None),
]
_ENTANGLED_EDGES = [
    (0, 1), (0, 2), (1, 2), (1, 3), (1, 4),
    (2, 5), (2, 6), (3, 4), (3, 6), (6, 7),
]

_TEMPLATES = {
    "cqi-chain": (_CQI_STAGES, _CQI_EDGES),
    "anomaly-sp": (_ANOMALY_STAGES, _ANOMALY_EDGES),
    "ran-entangled": (_ENTANGLED_STAGES, _ENTANGLED_EDGES),
}

PIPELINE_KINDS: tuple[str, ...] = tuple(_TEMPLATES)


def build_template(
    kind: str,
    *,
    demand: float = 1.0,
    base_bid: float = DEFAULT_BASE_BID,
    budget_multiplier: float = DEFAULT_BUDGET_MULTIPLIER,
) -> PipelineTemplate:
    """Return one of the built-in templates by name.

    Every template uses the same per-stage demand, so latency differences
    between templates come from DAG shape only.
    """
    try:
        stage_rows, edge_rows = _TEMPLATES[kind]
    except KeyError:
        raise ConfigError(
            f"unknown pipeline kind {kind!r}; expected one of {PIPELINE_KINDS}"
        ) from None
    stages = tuple(
        StageSpec(
            stage_id=i,
            stage_type=stype,
            demand=demand,
            output_rate=1.0,
            home_domain=home,
            slice=sl,
            sovereignty=sov or Sovereignty.FREE,
        )
        for i, (stype, home, sl, sov) in enumerate(stage_rows)
    )
    edges = tuple(StageEdge(a, b) for a, b in edge_rows)
    budget = len(stages) * budget_multiplier * base_bid
    return PipelineTemplate(kind=kind, stages=stages, edges=edges, value_budget=budget)


def template_from_dict(data: dict) -> PipelineTemplate:
    """Build a custom template from a plain mapping (scenario config)."""
    try:
        stages = tuple(
            StageSpec(
                stage_id=int(s["stage_id"]),
                stage_type=str(s["stage_type"]),
                demand=float(s.get("demand", 1.0)),
                output_rate=float(s.get("output_rate", 1.0)),
                home_domain=str(s.get("home_domain", "d1")),
                slice=Slice(s.get("slice", "best-effort")),
                sovereignty=Sovereignty(s.get("sovereignty", "free")),
            )
            for s in data["stages"]
        )
        edges = tuple(
            StageEdge(int(e[0]), int(e[1]), float(e[2]) if len(e) > 2 else math.inf)
            for e in data.get("edges", [])
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad custom template: {exc}") from exc
    budget = float(data.get("value_budget", len(stages) * DEFAULT_BUDGET_MULTIPLIER * DEFAULT_BASE_BID))
    return PipelineTemplate(kind=str(data.get("kind", "custom")), stages=stages, edges=edges, value_budget=budget)


# ---------------------------------------------------------------------------
# Ordering
# ---------------------------------------------------------------------------


def kahn_order(nodes: Iterable[Hashable], edges: Iterable[tuple[Hashable, Hashable]]) -> list:
    """Kahn's algorithm; among ready nodes the smallest id goes first."""
    nodes = list(nodes)
    indeg = {n: 0 for n in nodes}
    succ: dict = defaultdict(list)
    for a, b in edges:
        if a not in indeg or b not in indeg:
            raise StructuralError(f"edge {a}->{b} references unknown node")
        succ[a].append(b)
        indeg[b] += 1
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        n = heapq.heappop(ready)
        out.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(out) != len(nodes):
        raise StructuralError("cycle detected")
    return out


def topo_order(template: PipelineTemplate) -> list[int]:
    return kahn_order(template.stage_ids, template.edge_pairs())


# ---------------------------------------------------------------------------
# Structure recognition
# ---------------------------------------------------------------------------

TREE = "tree"
SERIES_PARALLEL = "series-parallel"
GENERAL = "general"

_SOURCE = "__source__"
_SINK = "__sink__"


@dataclass(frozen=True)
class ParseNode:
    """Binary SP parse tree node; ``op`` is ``edge``, ``S`` or ``P``."""

    op: str
    edge: tuple | None = None
    left: "ParseNode | None" = None
    right: "ParseNode | None" = None
    virtual: bool = False

    def leaves(self) -> list["ParseNode"]:
        if self.op == "edge":
            return [self]
        return self.left.leaves() + self.right.leaves()

    def real_edges(self) -> list[tuple]:
        return [leaf.edge for leaf in self.leaves() if not leaf.virtual]


@dataclass(frozen=True)
class StructureClass:
    cls: str
    parse_tree: ParseNode | None = None


def _sp_reduce(nodes: Sequence, edges: Sequence[tuple]) -> ParseNode | None:
    """Series/parallel reduction of the two-terminal augmentation.

    Multiple sources (sinks) are tied to a virtual terminal.  Returns the
    parse tree when the graph collapses to a single edge, else ``None``.
    """
    nodes = list(nodes)
    indeg = {n: 0 for n in nodes}
    outdeg = {n: 0 for n in nodes}
    for a, b in edges:
        outdeg[a] += 1
        indeg[b] += 1
    sources = [n for n in nodes if indeg[n] == 0]
    sinks = [n for n in nodes if outdeg[n] == 0]

    # edge id -> (u, v, tree)
    live: dict[int, tuple] = {}
    next_id = 0

    def add(u, v, tree):
        nonlocal next_id
        live[next_id] = (u, v, tree)
        next_id += 1

    for a, b in edges:
        add(a, b, ParseNode("edge", edge=(a, b)))
    if len(sources) == 1:
        s = sources[0]
    else:
        s = _SOURCE
        for n in sources:
            add(s, n, ParseNode("edge", edge=(s, n), virtual=True))
    if len(sinks) == 1:
        t = sinks[0]
    else:
        t = _SINK
        for n in sinks:
            add(n, t, ParseNode("edge", edge=(n, t), virtual=True))
    if s == t:
        return None

    changed = True
    while changed and len(live) > 1:
        changed = False
        # parallel: merge edges with identical endpoints
        by_ends: dict = defaultdict(list)
        for eid in sorted(live):
            u, v, _ = live[eid]
            by_ends[(u, v)].append(eid)
        for (u, v), eids in by_ends.items():
            if len(eids) > 1:
                tree = live[eids[0]][2]
                for eid in eids[1:]:
                    tree = ParseNode("P", left=tree, right=live[eid][2])
                for eid in eids:
                    del live[eid]
                add(u, v, tree)
                changed = True
        # series: internal node with exactly one in-edge and one out-edge
        ins: dict = defaultdict(list)
        outs: dict = defaultdict(list)
        for eid in sorted(live):
            u, v, _ = live[eid]
            outs[u].append(eid)
            ins[v].append(eid)
        for x in list(ins):
            if x in (s, t):
                continue
            if len(ins[x]) == 1 and len(outs[x]) == 1:
                e1, e2 = ins[x][0], outs[x][0]
                if e1 not in live or e2 not in live:
                    continue
                u, _, t1 = live[e1]
                _, w, t2 = live[e2]
                del live[e1]
                del live[e2]
                add(u, w, ParseNode("S", left=t1, right=t2))
                changed = True
                break
    if len(live) == 1:
        (u, v, tree), = live.values()
        if (u, v) == (s, t):
            return tree
    return None


def classify_structure(
    nodes: Iterable[Hashable] | PipelineTemplate,
    edges: Iterable[tuple] | None = None,
) -> StructureClass:
    """Classify a DAG as ``tree``, ``series-parallel`` or ``general``.

    Accepts a template or an explicit (nodes, edges) pair.
    """
    if isinstance(nodes, PipelineTemplate):
        edges = nodes.edge_pairs()
        nodes = nodes.stage_ids
    nodes = list(nodes)
    edges = list(edges or [])
    kahn_order(nodes, edges)
    parents: dict = defaultdict(int)
    for _, b in edges:
        parents[b] += 1
    tree = _sp_reduce(nodes, edges) if edges else None
    if all(parents[n] <= 1 for n in nodes):
        return StructureClass(TREE, tree)
    if tree is not None:
        return StructureClass(SERIES_PARALLEL, tree)
    return StructureClass(GENERAL, None)

