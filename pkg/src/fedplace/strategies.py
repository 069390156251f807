"""Comparator placement strategies evaluated against the market.

All strategies are pure functions over a :class:`TopologySnapshot`, apart
from the round-robin cursor which the owning broker keeps between calls.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dag import ConfigError, PipelineTemplate, StageSpec, topo_order
from .market import ReservationLedger, worker_cost
from .topology import (
    NO_GOVERNANCE,
    CostWeights,
    GovernancePolicy,
    PlacementDecision,
    TopologySnapshot,
    WorkerSpec,
    domains_touched,
    eligible,
    placement_cost,
    residual_capacity,
)

STRATEGY_NAMES = ("market", "oracle", "oracle-sharded", "rr-global", "locality", "latency-greedy", "spillover")

# exhaustive search is used while |workers| ** |stages| stays below this
EXACT_SEARCH_LIMIT = 20_000


def _decision(assignment: dict[int, int], pipeline: PipelineTemplate, snapshot: TopologySnapshot,
              weights: CostWeights | None = None) -> PlacementDecision:
    return PlacementDecision(
        assignment=dict(assignment),
        total_cost=placement_cost(assignment, pipeline, snapshot, weights),
        domains_crossed=domains_touched(assignment, snapshot.topology),
    )


def _free(worker: WorkerSpec, snapshot: TopologySnapshot, ledger: ReservationLedger | None) -> float:
    extra = ledger.added(worker.worker_id) if ledger is not None else 0.0
    return worker.capacity - snapshot.load(worker.worker_id) - extra


def _allowed_workers(stage: StageSpec, workers: Sequence[WorkerSpec], origin: str | None,
                     gov: GovernancePolicy) -> list[WorkerSpec]:
    out = [w for w in workers if eligible(w, stage)]
    if origin is not None:
        out = [w for w in out if gov.allows(stage, origin, w.domain)]
    return out


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def exhaustive_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    weights: CostWeights | None = None,
    origin: str | None = None,
    gov: GovernancePolicy = NO_GOVERNANCE,
) -> PlacementDecision:
    """Minimum-cost feasible placement by enumerating every assignment."""
    ids = list(pipeline.stage_ids)
    cands = [_allowed_workers(pipeline.stage(s), snapshot.workers, origin, gov) for s in ids]
    best: tuple[float, dict[int, int]] | None = None
    for combo in itertools.product(*cands):
        used: dict[int, float] = {}
        ok = True
        for s, w in zip(ids, combo):
            used[w.worker_id] = used.get(w.worker_id, 0.0) + pipeline.stage(s).demand
            if used[w.worker_id] > _free(w, snapshot, None) + 1e-9:
                ok = False
                break
        if not ok:
            continue
        assign = {s: w.worker_id for s, w in zip(ids, combo)}
        c = placement_cost(assign, pipeline, snapshot, weights)
        if best is None or c < best[0] - 1e-12:
            best = (c, assign)
    if best is None:
        return PlacementDecision.rejected("infeasible")
    return _decision(best[1], pipeline, snapshot, weights)


class _Problem:
    """Dense arrays for one pipeline over the visible workers.

    ``restrict`` limits the usable workers to a set of domains without
    rebuilding the arrays.
    """

    def __init__(self, pipeline, snapshot, workers, weights, origin, gov, ledger):
        self.pipeline = pipeline
        self.workers = list(workers)
        self.w = weights
        self.lat = snapshot.latency_matrix(self.workers)
        self.resid = np.array([residual_capacity(w, snapshot) for w in self.workers])
        self.free = np.array([_free(w, snapshot, ledger) for w in self.workers])
        self.domain = np.array([w.domain for w in self.workers])
        names = sorted(set(self.domain.tolist()))
        self.dcode = np.array([names.index(d) for d in self.domain], dtype=int)
        self.n_domains = len(names)
        self.order = topo_order(pipeline)
        self.preds = pipeline.predecessors()
        self.succ = pipeline.successors()
        self.demand = {s.stage_id: s.demand for s in pipeline.stages}
        tiers = np.array([w.slice.tier for w in self.workers])
        dom_ok = {}
        self.base_mask = {}
        for s in pipeline.stages:
            m = tiers >= s.slice.tier
            if origin is not None:
                pinned = gov.pinned(s)
                if pinned not in dom_ok:
                    ok = {d: gov.allows(s, origin, d) for d in set(self.domain.tolist())}
                    dom_ok[pinned] = np.array([ok[d] for d in self.domain], dtype=bool)
                m = m & dom_ok[pinned]
            self.base_mask[s.stage_id] = m
        self.mask = dict(self.base_mask)
        self._unary = {}

    def restrict(self, domains) -> None:
        keep = np.isin(self.domain, list(domains))  # once per subset
        self.mask = {sid: m & keep for sid, m in self.base_mask.items()}
        self._unary = {}

    def unary(self, sid: int) -> np.ndarray:
        if sid not in self._unary:
            u = self.w.beta * self.demand[sid] / self.resid
            self._unary[sid] = np.where(self.mask[sid], u, np.inf)
        return self._unary[sid]


def _tree_dp(prob: _Problem) -> dict[int, int] | None:
    """Bottom-up DP for pipelines where every stage has at most one parent.

    Exact for the latency and utilisation terms; capacity is handled by the
    repair pass afterwards.
    """
    order, succ, preds = prob.order, prob.succ, prob.preds
    lat = prob.w.alpha * prob.lat
    table: dict[int, np.ndarray] = {}
    choice: dict[tuple[int, int], np.ndarray] = {}
    for sid in reversed(order):
        cost = prob.unary(sid).copy()
        for c in succ[sid]:
            m = lat + table[c][None, :]
            arg = np.argmin(m, axis=1)
            cost = cost + m[np.arange(len(arg)), arg]
            choice[(sid, c)] = arg
        table[sid] = cost
    roots = [s for s in order if not preds[s]]
    assign: dict[int, int] = {}
    for r in roots:
        i = int(np.argmin(table[r]))
        if math.isinf(table[r][i]):
            return None
        stack = [(r, i)]
        while stack:
            sid, wi = stack.pop()
            assign[sid] = wi
            for c in succ[sid]:
                stack.append((c, int(choice[(sid, c)][wi])))
    return assign


def _greedy(prob: _Problem, hint: Mapping[int, int] | None = None,
            order: Sequence[int] | None = None) -> dict[int, int] | None:
    """Greedy on incremental cost with capacity accounting.

    Stages go in topological order unless ``order`` says otherwise; the
    latency term counts edges to whichever neighbours are already placed.
    With ``hint`` the hinted worker is kept whenever it still has room,
    which turns the pass into a capacity repair of an unconstrained plan.
    """
    free = prob.free.copy()
    assign: dict[int, int] = {}
    used = np.zeros(prob.n_domains, dtype=bool)
    for sid in (order or prob.order):
        d = prob.demand[sid]
        if hint is not None:
            hi = hint[sid]
            if prob.mask[sid][hi] and free[hi] >= d - 1e-9:
                assign[sid] = hi
                free[hi] -= d
                used[prob.dcode[hi]] = True
                continue
        inc = prob.unary(sid).copy()
        for p in (*prob.preds[sid], *prob.succ[sid]):
            if p in assign:
                inc += prob.w.alpha * prob.lat[assign[p]]
        if prob.w.zeta:
            inc += prob.w.zeta * ~used[prob.dcode]
        inc[free < d - 1e-9] = np.inf
        i = int(np.argmin(inc))
        if math.isinf(inc[i]):
            return None
        assign[sid] = i
        free[i] -= d
        used[prob.dcode[i]] = True
    return assign


def _plan_cost(prob: _Problem, plan: Mapping[int, int], edges: Sequence[tuple[int, int]]) -> float:
    c = sum(prob.unary(sid)[i] for sid, i in plan.items())
    c += prob.w.alpha * sum(prob.lat[plan[a], plan[b]] for a, b in edges)
    return float(c + prob.w.zeta * len({int(prob.dcode[i]) for i in plan.values()}))


def _local_search(prob: _Problem, plan: dict[int, int], rounds: int = 25) -> dict[int, int]:
    """Improve a feasible plan by single-stage moves and pairwise swaps.

    Greedy construction commits early stages before it sees where their
    successors can go; a swap is often the only way out once the good
    workers are full.
    """
    edges = prob.pipeline.edge_pairs()
    nbrs: dict[int, list[int]] = {sid: [] for sid in prob.order}
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    plan = dict(plan)
    free = prob.free.copy()
    for sid, i in plan.items():
        free[i] -= prob.demand[sid]
    count = np.bincount([prob.dcode[i] for i in plan.values()], minlength=prob.n_domains)
    lat = prob.w.alpha * prob.lat
    for _ in range(rounds):
        improved = False
        for sid in prob.order:
            cur, d = plan[sid], prob.demand[sid]
            count[prob.dcode[cur]] -= 1
            cost = prob.unary(sid).copy()
            for n in nbrs[sid]:
                cost += lat[:, plan[n]]
            cost += prob.w.zeta * (count[prob.dcode] == 0)
            room = free.copy()
            room[cur] += d
            cost[room < d - 1e-9] = np.inf
            j = int(np.argmin(cost))
            if cost[j] < cost[cur] - 1e-9:
                plan[sid] = j
                free[cur] += d
                free[j] -= d
                improved = True
            count[prob.dcode[plan[sid]]] += 1
        base = _plan_cost(prob, plan, edges)
        for a, b in itertools.combinations(prob.order, 2):
            ia, ib = plan[a], plan[b]
            if ia == ib or not (prob.mask[a][ib] and prob.mask[b][ia]):
                continue
            da, db = prob.demand[a], prob.demand[b]
            if free[ib] + db < da - 1e-9 or free[ia] + da < db - 1e-9:
                continue
            plan[a], plan[b] = ib, ia
            c = _plan_cost(prob, plan, edges)
            if c < base - 1e-9:
                free[ia] += da - db
                free[ib] += db - da
                base = c
                improved = True
            else:
                plan[a], plan[b] = ia, ib
        if not improved:
            break
    return plan


def _is_forest(pipeline: PipelineTemplate) -> bool:
    return all(len(p) <= 1 for p in pipeline.predecessors().values())


def oracle_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    weights: CostWeights | None = None,
    origin: str | None = None,
    gov: GovernancePolicy = NO_GOVERNANCE,
    ledger: ReservationLedger | None = None,
    exact_limit: int = EXACT_SEARCH_LIMIT,
    polish: int = 3,
) -> PlacementDecision:
    """Full-visibility cost-minimising placement.

    Small instances are solved exactly.  Otherwise, for every non-empty
    subset of domains, tree-shaped pipelines get a DP solution followed by a
    capacity repair, and every pipeline also gets a capacity-aware greedy
    pass.  The ``polish`` cheapest candidates are then improved by local
    search and the best result wins.
    """
    weights = weights or CostWeights()
    workers = snapshot.workers
    if ledger is None and len(workers) ** len(pipeline.stages) <= exact_limit:
        return exhaustive_place(pipeline, snapshot, weights, origin, gov)

    domains = sorted({w.domain for w in workers})
    forest = _is_forest(pipeline)
    prob = _Problem(pipeline, snapshot, workers, weights, origin, gov, ledger)
    edges = pipeline.edge_pairs()
    rank_of = {sid: i for i, sid in enumerate(prob.order)}
    by_demand = sorted(prob.order, key=lambda sid: (-prob.demand[sid], rank_of[sid]))
    cands: list[tuple[float, int, dict[int, int]]] = []
    for k in range(1, len(domains) + 1):
        for subset in itertools.combinations(domains, k):
            prob.restrict(subset)
            if not all(m.any() for m in prob.mask.values()):
                continue
            plans = []
            if forest:
                dp = _tree_dp(prob)
                if dp is not None:
                    plans.append(_greedy(prob, hint=dp))
            plans.append(_greedy(prob))
            # big stages first, so small ones cannot crowd them out of the good workers
            plans.append(_greedy(prob, order=by_demand))
            for plan in plans:
                if plan is not None:
                    cands.append((_plan_cost(prob, plan, edges), len(cands), plan))
    if not cands:
        return PlacementDecision.rejected("infeasible")
    # polish the few best constructions on the full worker set
    prob.restrict(domains)
    best: tuple[float, dict[int, int]] | None = None
    for _, _, plan in sorted(cands, key=lambda c: (c[0], c[1]))[:polish]:
        assign = {s: prob.workers[i].worker_id for s, i in _local_search(prob, plan).items()}
        c = placement_cost(assign, pipeline, snapshot, weights)
        if best is None or c < best[0] - 1e-12:
            best = (c, assign)
    return _decision(best[1], pipeline, snapshot, weights)


def sharded_oracle_place(
    pipeline: PipelineTemplate,
    coordinator: TopologySnapshot,
    pulled: Mapping[str, TopologySnapshot | None],
    coordinator_domain: str,
    weights: CostWeights | None = None,
    origin: str | None = None,
    gov: GovernancePolicy = NO_GOVERNANCE,
    ledger: ReservationLedger | None = None,
    exact_limit: int = EXACT_SEARCH_LIMIT,
) -> PlacementDecision:
    """Oracle placement at a coordinator over merged per-domain snapshots.

    ``pulled`` maps each peer domain to the snapshot it returned this epoch,
    or ``None`` if the pull timed out; such peers' workers are excluded.
    """
    merged = merge_snapshots(coordinator, pulled, coordinator_domain)
    return oracle_place(pipeline, merged, weights, origin, gov, ledger, exact_limit)


def merge_snapshots(
    coordinator: TopologySnapshot,
    pulled: Mapping[str, TopologySnapshot | None],
    coordinator_domain: str,
) -> TopologySnapshot:
    topo = coordinator.topology
    loads: dict[int, float] = {}
    alive: dict[int, bool] = {}
    visible: set[int] = set()
    sources = {coordinator_domain: coordinator, **{d: s for d, s in pulled.items() if d != coordinator_domain}}
    for dom, snap in sources.items():
        if snap is None:
            continue
        for w in topo.workers_in(dom):
            loads[w.worker_id] = snap.load(w.worker_id)
            alive[w.worker_id] = snap.is_alive(w.worker_id)
            visible.add(w.worker_id)
    return TopologySnapshot(topo, loads, alive, frozenset(visible))


# ---------------------------------------------------------------------------
# round robin and heuristics
# ---------------------------------------------------------------------------


@dataclass
class RRCursor:
    position: int = 0


def rr_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    cursor: RRCursor,
    origin: str | None = None,
    gov: GovernancePolicy = NO_GOVERNANCE,
) -> PlacementDecision:
    """Cyclic assignment over the global worker list in id order.

    Each stage takes the next slice-feasible worker after the cursor; load
    is never consulted.
    """
    workers = sorted(snapshot.workers, key=lambda w: w.worker_id)
    n = len(workers)
    if n == 0:
        return PlacementDecision.rejected("infeasible")
    assign: dict[int, int] = {}
    pos = cursor.position % n
    for sid in topo_order(pipeline):
        stage = pipeline.stage(sid)
        for step in range(n):
            w = workers[(pos + step) % n]
            if eligible(w, stage) and (origin is None or gov.allows(stage, origin, w.domain)):
                assign[sid] = w.worker_id
                pos = (pos + step + 1) % n
                break
        else:
            return PlacementDecision.rejected("infeasible")
    cursor.position = pos
    return _decision(assign, pipeline, snapshot)


def _cheapest(workers: Sequence[WorkerSpec], stage: StageSpec, snapshot: TopologySnapshot,
              ledger: ReservationLedger) -> WorkerSpec | None:
    best = None
    for w in workers:
        if not eligible(w, stage) or _free(w, snapshot, ledger) < stage.demand - 1e-9:
            continue
        # priced like a market bid: reported load only, the ledger gates capacity
        key = (worker_cost(w.bid, snapshot.load(w.worker_id), w.capacity), w.worker_id)
        if best is None or key < best[0]:
            best = (key, w)
    return None if best is None else best[1]


def _take(ledger: ReservationLedger, w: WorkerSpec, demand: float) -> None:
    ledger.additions[w.worker_id] = ledger.added(w.worker_id) + demand


def locality_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    origin: str,
    ledger: ReservationLedger | None = None,
) -> PlacementDecision:
    """Cheapest feasible worker in the origin domain only."""
    ledger = ledger if ledger is not None else ReservationLedger()
    local = [w for w in snapshot.workers if w.domain == origin]
    assign: dict[int, int] = {}
    taken: list[tuple[WorkerSpec, float]] = []
    for sid in topo_order(pipeline):
        stage = pipeline.stage(sid)
        w = _cheapest(local, stage, snapshot, ledger)
        if w is None:
            for tw, d in taken:
                ledger.release(tw.worker_id, d)
            return PlacementDecision.rejected("infeasible")
        _take(ledger, w, stage.demand)
        taken.append((w, stage.demand))
        assign[sid] = w.worker_id
    return _decision(assign, pipeline, snapshot)


def latency_greedy_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    origin: str,
    gov: GovernancePolicy = NO_GOVERNANCE,
    ledger: ReservationLedger | None = None,
) -> PlacementDecision:
    """Per stage, minimise link latency to the predecessors' workers.

    Load is ignored apart from the hard capacity check; ties go to the
    origin domain, then to the lowest worker id.  Source stages are anchored
    at the origin domain.
    """
    ledger = ledger if ledger is not None else ReservationLedger()
    assign: dict[int, int] = {}
    taken: list[tuple[WorkerSpec, float]] = []
    pred_map = pipeline.predecessors()
    for sid in topo_order(pipeline):
        stage = pipeline.stage(sid)
        preds = pred_map[sid]
        best = None
        for w in snapshot.workers:
            if not eligible(w, stage) or not gov.allows(stage, origin, w.domain):
                continue
            if _free(w, snapshot, ledger) < stage.demand - 1e-9:
                continue
            if preds:
                lat = sum(snapshot.link_latency(assign[p], w.worker_id) for p in preds)
            else:
                lat = snapshot.topology.domain_latency(origin, w.domain) if w.domain != origin else 0.0
            key = (lat, w.domain != origin, w.worker_id)
            if best is None or key < best[0]:
                best = (key, w)
        if best is None:
            for tw, d in taken:
                ledger.release(tw.worker_id, d)
            return PlacementDecision.rejected("infeasible")
        w = best[1]
        _take(ledger, w, stage.demand)
        taken.append((w, stage.demand))
        assign[sid] = w.worker_id
    return _decision(assign, pipeline, snapshot)


def spillover_place(
    pipeline: PipelineTemplate,
    snapshot: TopologySnapshot,
    origin: str,
    gov: GovernancePolicy = NO_GOVERNANCE,
    ledger: ReservationLedger | None = None,
) -> PlacementDecision:
    """Origin domain first; once it has no room, the nearest peer domain."""
    ledger = ledger if ledger is not None else ReservationLedger()
    topo = snapshot.topology
    peers = sorted((d for d in topo.domain_ids if d != origin),
                   key=lambda d: (topo.domain_latency(origin, d), d))
    assign: dict[int, int] = {}
    taken: list[tuple[WorkerSpec, float]] = []
    for sid in topo_order(pipeline):
        stage = pipeline.stage(sid)
        chosen = None
        for dom in [origin, *peers]:
            if not gov.allows(stage, origin, dom):
                continue
            chosen = _cheapest([w for w in snapshot.workers if w.domain == dom], stage, snapshot, ledger)
            if chosen is not None:
                break
        if chosen is None:
            for tw, d in taken:
                ledger.release(tw.worker_id, d)
            return PlacementDecision.rejected("infeasible")
        _take(ledger, chosen, stage.demand)
        taken.append((chosen, stage.demand))
        assign[sid] = chosen.worker_id
    return _decision(assign, pipeline, snapshot)


def check_strategy(name: str) -> str:
    if name not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGY_NAMES)}")
    return name
