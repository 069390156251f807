"""Service-feasibility math over service-dependency DAGs.

Leaf-set families, laminarity, the antichain rank function, submodularity
certification, coordinate-wise governance bounds, max-flow and integrator
encapsulation into a quotient graph.

Leaves carry their own capacity and act as singleton constraints, so the
rank is well defined for every leaf subset.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping

import numpy as np

from .dag import PipelineTemplate, StructuralError, classify_structure, kahn_order

Node = Hashable


@dataclass(frozen=True)
class ServiceDag:
    nodes: tuple
    edges: tuple
    capacity: Mapping[Node, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        kahn_order(self.nodes, self.edges)
        for n in self.nodes:
            if not self.capacity.get(n, 0) > 0:
                raise StructuralError(f"node {n!r} needs capacity > 0")

    @cached_property
    def children(self) -> dict:
        ch: dict = {n: [] for n in self.nodes}
        for a, b in self.edges:
            ch[a].append(b)
        return ch

    @cached_property
    def parents(self) -> dict:
        pa: dict = {n: [] for n in self.nodes}
        for a, b in self.edges:
            pa[b].append(a)
        return pa

    @cached_property
    def leaves(self) -> tuple:
        return tuple(n for n in self.nodes if not self.children[n])

    @cached_property
    def internal(self) -> tuple:
        return tuple(n for n in self.nodes if self.children[n])

    @cached_property
    def descendants(self) -> dict:
        order = kahn_order(self.nodes, self.edges)
        desc: dict = {}
        for n in reversed(order):
            d = set()
            for c in self.children[n]:
                d.add(c)
                d |= desc[c]
            desc[n] = frozenset(d)
        return desc

    def comparable(self, a: Node, b: Node) -> bool:
        return a == b or b in self.descendants[a] or a in self.descendants[b]


def resource_graph(template: PipelineTemplate, capacity: float = 4.0) -> ServiceDag:
    """View a pipeline template as a service-dependency DAG (uniform capacity)."""
    return ServiceDag(
        nodes=tuple(template.stage_ids),
        edges=tuple(template.edge_pairs()),
        capacity={s.stage_id: capacity * s.demand for s in template.stages},
    )


@dataclass(frozen=True)
class LeafSetFamily:
    sets: Mapping[Node, frozenset]


def leaf_sets(dag: ServiceDag) -> LeafSetFamily:
    leaves = set(dag.leaves)
    return LeafSetFamily(
        {v: frozenset(dag.descendants[v] & leaves) for v in dag.internal}
    )


def is_laminar(family: LeafSetFamily | Iterable[Iterable]) -> tuple[bool, tuple | None]:
    """Return (True, None) or (False, crossing_pair)."""
    sets = family.sets.values() if isinstance(family, LeafSetFamily) else family
    uniq = list(dict.fromkeys(frozenset(s) for s in sets))
    for a, b in itertools.combinations(uniq, 2):
        if a & b and not (a <= b or b <= a):
            return False, (set(a), set(b))
    return True, None


# ---------------------------------------------------------------------------
# Rank function
# ---------------------------------------------------------------------------


class _RankTable:
    """Bitmask view of the antichain cover problem for one DAG."""

    def __init__(self, dag: ServiceDag) -> None:
        self.dag = dag
        self.leaves = list(dag.leaves)
        self.index = {l: i for i, l in enumerate(self.leaves)}
        fam = leaf_sets(dag)
        self.cover = {v: self._mask(fam.sets[v]) for v in dag.internal}
        n = len(self.leaves)
        caps = np.array([dag.capacity[l] for l in self.leaves], dtype=float)
        masks = np.arange(1 << n, dtype=np.int64)
        bits = (masks[:, None] >> np.arange(n)) & 1
        self.leaf_cost = bits @ caps if n else np.zeros(1)

    def _mask(self, leaves: Iterable) -> int:
        m = 0
        for l in leaves:
            m |= 1 << self.index[l]
        return m

    @cached_property
    def antichains(self) -> list[tuple[float, int]]:
        """Every antichain of internal nodes as (total capacity, cover mask)."""
        internal = list(self.dag.internal)
        out: list[tuple[float, int]] = []

        def grow(start: int, chosen: list, cost: float, mask: int) -> None:
            out.append((cost, mask))
            for i in range(start, len(internal)):
                v = internal[i]
                if any(self.dag.comparable(v, u) for u in chosen):
                    continue
                chosen.append(v)
                grow(i + 1, chosen, cost + self.dag.capacity[v], mask | self.cover[v])
                chosen.pop()

        grow(0, [], 0.0, 0)
        return out

    def rank_mask(self, s: int) -> float:
        best = math.inf
        for cost, mask in self.antichains:
            val = cost + self.leaf_cost[s & ~mask]
            if val < best:
                best = val
        return float(best)

    @cached_property
    def all_ranks(self) -> np.ndarray:
        n = len(self.leaves)
        masks = np.arange(1 << n, dtype=np.int64)
        best = np.full(1 << n, np.inf)
        for cost, mask in self.antichains:
            np.minimum(best, cost + self.leaf_cost[masks & ~mask], out=best)
        return best


_TABLES: dict[int, _RankTable] = {}


def _table(dag: ServiceDag) -> _RankTable:
    key = id(dag)
    t = _TABLES.get(key)
    if t is None or t.dag is not dag:
        if len(_TABLES) > 256:
            _TABLES.clear()
        t = _TABLES[key] = _RankTable(dag)
    return t


def _check_leaves(dag: ServiceDag, S: Iterable) -> frozenset:
    S = frozenset(S)
    unknown = S - set(dag.leaves)
    if unknown:
        raise ValueError(f"not leaves of the DAG: {sorted(map(str, unknown))}")
    return S


def rank_bruteforce(dag: ServiceDag, S: Iterable) -> float:
    """Minimum antichain cover cost by exhaustive enumeration."""
    S = _check_leaves(dag, S)
    if not S:
        return 0.0
    t = _table(dag)
    return t.rank_mask(t._mask(S))


def rank_laminar(dag: ServiceDag, S: Iterable) -> float:
    """Rank via the inclusion forest of a laminar leaf-set family."""
    S = _check_leaves(dag, S)
    if not S:
        return 0.0
    fam = leaf_sets(dag)
    ok, _ = is_laminar(fam)
    if not ok:
        raise ValueError("rank_laminar needs a laminar leaf-set family")
    cap: dict[frozenset, float] = {}
    for v, ls in fam.sets.items():
        cap[ls] = min(cap.get(ls, math.inf), dag.capacity[v])
    for l in dag.leaves:
        key = frozenset([l])
        cap[key] = min(cap.get(key, math.inf), dag.capacity[l])
    sets = sorted(cap, key=len)
    parent: dict[frozenset, frozenset | None] = {}
    for i, x in enumerate(sets):
        # smallest strict superset is the forest parent
        parent[x] = next((y for y in sets[i + 1:] if x < y), None)
    kids: dict = defaultdict(list)
    for x, p in parent.items():
        if p is not None:
            kids[p].append(x)

    def g(x: frozenset) -> float:
        if not (x & S):
            return 0.0
        if len(x) == 1:
            return cap[x]
        return min(cap[x], sum(g(c) for c in kids[x]))

    return sum(g(x) for x in sets if parent[x] is None)


def rank(dag: ServiceDag, S: Iterable) -> float:
    """f(S): min over antichains covering S of the summed capacities."""
    fam = leaf_sets(dag)
    if is_laminar(fam)[0]:
        return rank_laminar(dag, S)
    return rank_bruteforce(dag, S)


# ---------------------------------------------------------------------------
# Feasibility and submodularity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GovernanceBounds:
    u: Mapping[Node, float] = field(default_factory=dict)

    def check(self, dag: ServiceDag) -> None:
        for l, bound in self.u.items():
            if bound > dag.capacity[l]:
                raise ValueError(f"bound on {l!r} exceeds its capacity")


def is_feasible(
    x: Mapping[Node, float],
    dag: ServiceDag,
    bounds: GovernanceBounds | None = None,
    tol: float = 1e-9,
) -> bool:
    if set(x) != set(dag.leaves):
        raise ValueError("allocation must cover exactly the DAG's leaves")
    if any(v < -tol for v in x.values()):
        return False
    for v, ls in leaf_sets(dag).sets.items():
        if sum(x[l] for l in ls) > dag.capacity[v] + tol:
            return False
    if bounds is not None:
        for l, b in bounds.u.items():
            if x[l] > b + tol:
                return False
    return True


@dataclass(frozen=True)
class StructureReport:
    laminar: bool
    witness: tuple | None
    submodular: bool
    gamma: int
    max_violation: float
    checked: int


def check_submodular(
    dag: ServiceDag,
    sample_budget: int = 2000,
    rng_seed: int = 0,
    exhaustive_limit: int = 12,
) -> StructureReport:
    """Count submodularity violations of the rank function.

    Up to ``exhaustive_limit`` leaves every local condition
    f(S+a) + f(S+b) >= f(S+a+b) + f(S) is checked (equivalent to the
    pairwise definition).  Larger DAGs fall back to ``sample_budget``
    random pairs (S, T).
    """
    laminar, witness = is_laminar(leaf_sets(dag))
    t = _table(dag)
    n = len(t.leaves)
    violations = 0
    worst = 0.0
    checked = 0
    tol = 1e-9
    if n <= exhaustive_limit:
        f = t.all_ranks
        for s in range(1 << n):
            free = [i for i in range(n) if not s >> i & 1]
            for a, b in itertools.combinations(free, 2):
                sa, sb = s | 1 << a, s | 1 << b
                gap = f[s | 1 << a | 1 << b] + f[s] - f[sa] - f[sb]
                checked += 1
                if gap > tol:
                    violations += 1
                    worst = max(worst, float(gap))
    else:
        rng = np.random.default_rng(rng_seed)
        for _ in range(sample_budget):
            s = int(rng.integers(0, 1 << n))
            u = int(rng.integers(0, 1 << n))
            gap = (t.rank_mask(s | u) + t.rank_mask(s & u)
                   - t.rank_mask(s) - t.rank_mask(u))
            checked += 1
            if gap > tol:
                violations += 1
                worst = max(worst, gap)
    return StructureReport(
        laminar=laminar,
        witness=witness,
        submodular=violations == 0,
        gamma=violations,
        max_violation=worst,
        checked=checked,
    )


# ---------------------------------------------------------------------------
# Max-flow (shortest augmenting path)
# ---------------------------------------------------------------------------


def max_flow(
    arcs: Mapping[tuple, float] | Iterable[tuple],
    source: Node,
    sink: Node,
) -> float:
    """Edmonds-Karp max-flow over a capacitated digraph.

    ``arcs`` is either {(u, v): capacity} or an iterable of (u, v, capacity)
    triples; parallel arcs are summed.
    """
    if source == sink:
        raise ValueError("source and sink must differ")
    items = arcs.items() if isinstance(arcs, Mapping) else (((u, v), c) for u, v, c in arcs)
    residual: dict = defaultdict(lambda: defaultdict(float))
    for (u, v), c in items:
        if c < 0:
            raise ValueError("capacities must be nonnegative")
        residual[u][v] += c
        residual[v][u] += 0.0
    if source not in residual or sink not in residual:
        return 0.0
    flow = 0.0
    while True:
        parent = {source: None}
        q = deque([source])
        while q and sink not in parent:
            u = q.popleft()
            for v, c in residual[u].items():
                if c > 1e-12 and v not in parent:
                    parent[v] = u
                    q.append(v)
        if sink not in parent:
            return flow
        path = []
        v = sink
        while parent[v] is not None:
            path.append((parent[v], v))
            v = parent[v]
        push = min(residual[u][v] for u, v in path)
        if math.isinf(push):
            return math.inf
        for u, v in path:
            residual[u][v] -= push
            residual[v][u] += push
        flow += push


# ---------------------------------------------------------------------------
# Integrator encapsulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegratorView:
    partition: Mapping[Node, str]
    quotient_nodes: tuple
    quotient_edges: tuple
    composite_capacity: Mapping[str, float]

    def classify(self):
        return classify_structure(self.quotient_nodes, self.quotient_edges)


def _weakly_connected(nodes: set, edges: Iterable[tuple]) -> bool:
    if not nodes:
        return False
    adj: dict = defaultdict(set)
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        n = stack.pop()
        for m in adj[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen == nodes


def composite_capacity(dag: ServiceDag, members: set) -> float:
    """Max-flow through the node-capacitated sub-DAG induced by ``members``.

    Each node is split into in/out halves joined by its capacity; boundary
    entries hang off a super-source and boundary exits feed a super-sink.
    """
    src, snk = ("__S__",), ("__T__",)
    arcs: dict = {}
    for n in members:
        arcs[((n, "in"), (n, "out"))] = dag.capacity[n]
        preds = dag.parents[n]
        succs = dag.children[n]
        if not preds or any(p not in members for p in preds):
            arcs[(src, (n, "in"))] = math.inf
        if not succs or any(c not in members for c in succs):
            arcs[((n, "out"), snk)] = math.inf
    for a, b in dag.edges:
        if a in members and b in members:
            arcs[((a, "out"), (b, "in"))] = math.inf
    return max_flow(arcs, src, snk)


def encapsulate(dag: ServiceDag, partition: Mapping[Node, str]) -> IntegratorView:
    """Contract each partition class to one composite node."""
    missing = set(dag.nodes) - set(partition)
    if missing:
        raise StructuralError(f"partition misses nodes {sorted(map(str, missing))}")
    classes: dict[str, set] = defaultdict(set)
    for n in dag.nodes:
        classes[partition[n]].add(n)
    composite = {}
    for dom, members in classes.items():
        inner = [(a, b) for a, b in dag.edges if a in members and b in members]
        if not _weakly_connected(members, inner):
            raise StructuralError(f"class {dom!r} does not induce a connected sub-DAG")
        composite[dom] = composite_capacity(dag, members)
    qedges = sorted({
        (partition[a], partition[b]) for a, b in dag.edges if partition[a] != partition[b]
    })
    return IntegratorView(
        partition=dict(partition),
        quotient_nodes=tuple(sorted(classes)),
        quotient_edges=tuple(qedges),
        composite_capacity=composite,
    )


def domain_partition(template: PipelineTemplate) -> dict[int, str]:
    return {s.stage_id: s.home_domain for s in template.stages}


def connected_refinement(dag: ServiceDag, partition: Mapping[Node, str]) -> dict:
    """Split every disconnected class into its weak components.

    Components after the first are labelled ``<class>#<k>``; connected
    classes keep their label.
    """
    classes: dict[str, list] = defaultdict(list)
    for n in dag.nodes:
        classes[partition[n]].append(n)
    out: dict = {}
    for dom, members in classes.items():
        mset = set(members)
        adj: dict = defaultdict(set)
        for a, b in dag.edges:
            if a in mset and b in mset:
                adj[a].add(b)
                adj[b].add(a)
        seen: set = set()
        k = 0
        for n in members:
            if n in seen:
                continue
            comp = {n}
            stack = [n]
            while stack:
                x = stack.pop()
                for y in adj[x]:
                    if y not in comp:
                        comp.add(y)
                        stack.append(y)
            seen |= comp
            label = dom if k == 0 else f"{dom}#{k}"
            for x in comp:
                out[x] = label
            k += 1
    return out
