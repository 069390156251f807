"""Acceptance suite: eleven named criteria, each printed as one pass/fail line.

Criteria that need simulations share one knee estimate, measured on the
same build with ``calibrate_knee``.  Names usable with ``--filter``:
structure, polymatroid, pricing, oracle, saturation, heterogeneity,
governance, federation, parity, statistics, determinism.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .dag import PIPELINE_KINDS, ConfigError, PipelineTemplate, Slice, StageEdge, StageSpec, build_template, classify_structure
from .harness import ScenarioConfig, calibrate_knee, phase_cells, run_cell, run_grid
from .market import PriceSignalMsg, WorkerBid, clearing_prices, trade_decision, worker_cost
from .polymatroid import (
    ServiceDag,
    check_submodular,
    domain_partition,
    encapsulate,
    is_laminar,
    leaf_sets,
    rank_bruteforce,
    rank_laminar,
    resource_graph,
)
from .stats import bootstrap_ci, hodges_lehmann, knee_fit, sign_test
from .strategies import exhaustive_place, oracle_place, sharded_oracle_place
from .topology import TopologySnapshot, default_topology

ACCEPT_SEEDS = (0, 1, 2)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:>2} {self.name:<13} {self.detail} ({self.seconds:.1f}s)"


@dataclass
class Context:
    """Shared state for one acceptance run."""

    parallel: int = 1
    base: ScenarioConfig = field(default_factory=lambda: ScenarioConfig(seeds=ACCEPT_SEEDS))
    _knee: float | None = None
    knee_points: list = field(default_factory=list)

    @property
    def knee(self) -> float:
        if self._knee is None:
            fit, points = calibrate_knee(self.base.with_(seeds=(0,)), self.parallel, bootstrap_B=200)
            self.knee_points = points
            if fit.degenerate:
                raise RuntimeError("knee calibration found a flat CR curve")
            self._knee = fit.breakpoint
        return self._knee


# ---------------------------------------------------------------------------
# random instance generators (also used by the test-suite)
# ---------------------------------------------------------------------------


def random_laminar_dag(rng: np.random.Generator, max_internal: int = 10) -> ServiceDag:
    """A random out-forest plus shortcut edges that keep leaf sets laminar.

    A shortcut u -> v with v already below u adds no leaf to u's leaf set,
    so the family stays laminar while the graph stops being a tree.
    """
    n_internal = int(rng.integers(1, max_internal + 1))
    parent: dict[int, int | None] = {0: None}
    for v in range(1, n_internal):
        parent[v] = int(rng.integers(0, v)) if rng.random() < 0.85 else None
    n_leaves = int(rng.integers(1, 9))
    nid = n_internal
    edges = [(p, v) for v, p in parent.items() if p is not None]
    childless = [v for v in range(n_internal) if all(p != v for p in parent.values())]
    for v in childless:
        edges.append((v, nid))
        nid += 1
    for _ in range(max(0, n_leaves - len(childless))):
        edges.append((int(rng.integers(0, n_internal)), nid))
        nid += 1
    below: dict[int, set] = {v: set() for v in range(nid)}
    for a, b in sorted(edges, key=lambda e: -e[0]):
        below[a] |= {b} | below[b]
    for _ in range(int(rng.integers(0, 3))):
        u = int(rng.integers(0, n_internal))
        deep = sorted(below[u] - {b for a, b in edges if a == u})
        if deep:
            edges.append((u, int(rng.choice(deep))))
    cap = {v: float(rng.integers(1, 11)) for v in range(nid)}
    return ServiceDag(tuple(range(nid)), tuple(edges), cap)


def random_placement_instance(rng: np.random.Generator) -> tuple[PipelineTemplate, TopologySnapshot]:
    """Up to 4 stages on up to 6 workers drawn from the default topology."""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(2, 7))
    slices = ["URLLC", "eMBB", "best-effort"]
    stages = tuple(
        StageSpec(i, f"t{i}", float(rng.choice([0.5, 1.0, 2.0])), 1.0, f"d{int(rng.integers(1, 5))}",
                  Slice(slices[int(rng.choice(3, p=[0.2, 0.3, 0.5]))]))
        for i in range(n)
    )
    edges = tuple(StageEdge(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < 0.5)
    pipe = PipelineTemplate("custom", stages, edges)
    base = default_topology(workers_per_domain=2)
    pick = sorted(rng.choice(len(base.workers), m, replace=False))
    topo = base.with_workers(base.workers[i] for i in pick)
    loads = {w.worker_id: float(rng.uniform(0.0, 3.0)) for w in topo.workers}
    return pipe, TopologySnapshot(topo, loads)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def check_structure(ctx: Context) -> tuple[bool, str]:
    got = {k: classify_structure(build_template(k)).cls for k in PIPELINE_KINDS}
    want = {"cqi-chain": "tree", "anomaly-sp": "series-parallel", "ran-entangled": "general"}
    t = build_template("ran-entangled")
    view = encapsulate(resource_graph(t), domain_partition(t))
    qcls = view.classify().cls
    ok = got == want and len(view.quotient_nodes) == 4 and qcls == "tree"
    return ok, f"classes={got} quotient={len(view.quotient_nodes)} nodes/{qcls}"


def check_polymatroid(ctx: Context) -> tuple[bool, str]:
    rng = np.random.default_rng(2024)
    mismatches = subsets = sub_checked = sub_fail = 0
    for _ in range(200):
        dag = random_laminar_dag(rng)
        if not is_laminar(leaf_sets(dag))[0]:
            return False, "generator produced a crossing family"
        leaves = dag.leaves
        for r in range(len(leaves) + 1):
            for S in itertools.combinations(leaves, r):
                subsets += 1
                if abs(rank_laminar(dag, S) - rank_bruteforce(dag, S)) > 1e-9:
                    mismatches += 1
        if len(leaves) <= 6:
            rep = check_submodular(dag)
            sub_checked += 1
            sub_fail += not rep.submodular
    ok = mismatches == 0 and sub_fail == 0 and sub_checked > 0
    return ok, (f"{subsets} rank evaluations, {mismatches} mismatches; "
                f"{sub_checked} small DAGs, {sub_fail} submodularity failures")


def _ranked_brute(bids: list[WorkerBid], d: int) -> WorkerBid:
    # the d-th cheapest is the bid with exactly d-1 bids strictly ahead of it
    for b in bids:
        ahead = sum(1 for o in bids if (o.cost, o.worker_id) < (b.cost, b.worker_id))
        if ahead == d - 1:
            return b
    raise AssertionError("no bid at that rank")


def check_pricing(ctx: Context) -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    b = rng.uniform(0.01, 100.0, 1000)
    c = rng.uniform(0.5, 16.0, 1000)
    over = c * rng.uniform(1.0, 5.0, 1000)
    saturated = all(worker_cost(bi, li, ci) == 100.0 * bi for bi, li, ci in zip(b, over, c))

    monotone = True
    for _ in range(10_000):
        bid, cap = float(rng.uniform(0.01, 100)), float(rng.uniform(0.5, 16))
        l1, l2 = sorted(rng.uniform(0, 2 * cap, 2))
        if worker_cost(bid, l1, cap) > worker_cost(bid, l2, cap):
            monotone = False
            break

    order_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        costs = rng.choice([1.0, 2.0, 2.5, 3.0, 7.0], n) if rng.random() < 0.5 else rng.uniform(1, 50, n)
        bids = [WorkerBid(int(w), "x", float(cst), float(cst)) for w, cst in zip(rng.permutation(100)[:n], costs)]
        demand = int(rng.integers(0, 15))
        table = clearing_prices({"x": bids}, {"x": demand})
        ref = _ranked_brute(bids, max(1, min(demand, n)))
        if table.prices["x"] != ref.cost or table.priced_worker["x"] != ref.worker_id:
            order_ok = False
            break

    sig = [PriceSignalMsg("d3", {"x": 5.0}, 0.0), PriceSignalMsg("d2", {"x": 5.0}, 0.0)]
    ties_ok = (not trade_decision("x", 15.0, sig, 10.0).remote
               and trade_decision("x", 15.5, sig, 10.0).domain == "d2")
    ok = saturated and monotone and order_ok and ties_ok
    return ok, (f"saturated=100b:{saturated} monotone:{monotone} order-statistic:{order_ok} "
                f"tie-preference:{ties_ok}")


def check_oracle(ctx: Context) -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    mismatches = heuristic_agree = feasible = 0
    for _ in range(50):
        pipe, snap = random_placement_instance(rng)
        ref = exhaustive_place(pipe, snap)
        got = oracle_place(pipe, snap)
        feasible += ref.accepted
        if got.accepted != ref.accepted or (ref.accepted and abs(got.total_cost - ref.total_cost) > 1e-9):
            mismatches += 1
        fast = oracle_place(pipe, snap, exact_limit=0)
        heuristic_agree += fast.accepted == ref.accepted and (
            not ref.accepted or abs(fast.total_cost - ref.total_cost) <= 1e-9)
    return mismatches == 0, (f"50 instances ({feasible} feasible), {mismatches} mismatches; "
                             f"heuristic path alone agrees on {heuristic_agree}/50")


def check_saturation(ctx: Context) -> tuple[bool, str]:
    knee = ctx.knee
    lams = [round(knee * f, 1) for f in (0.5, 0.75, 1.1)]
    cells = [ctx.base.with_(strategy=s, lambda_pps=lam) for s in ("rr-global", "market") for lam in lams]
    res = run_grid(cells, None, False, ctx.parallel)
    rr = [r.mean_cr for r in res[:3]]
    mk = [r.mean_cr for r in res[3:]]
    strictly = rr[0] > rr[1] > rr[2]
    ok = strictly and rr[2] < 0.30 and min(mk[:2]) >= 0.95 and mk[2] - rr[2] >= 0.30
    return ok, (f"knee={knee:.1f} lambda={lams} rr CR={[round(x, 3) for x in rr]} "
                f"market CR={[round(x, 3) for x in mk]} rr strictly decreasing:{strictly}")


def check_heterogeneity(ctx: Context) -> tuple[bool, str]:
    res = run_grid(phase_cells("heterogeneity", ctx.base), None, False, ctx.parallel)
    by = {(r.cfg.strategy, r.cfg.pipeline_kind): r.mean_latency for r in res}
    ratios = {k: by[("market", k)] / by[("rr-global", k)] for k in PIPELINE_KINDS}
    ok = all(v <= 0.70 for v in ratios.values())
    return ok, "market/rr " + " ".join(f"{k}={v:.3f}" for k, v in ratios.items())


def check_governance(ctx: Context) -> tuple[bool, str]:
    res = run_grid(phase_cells("governance-grid", ctx.base), None, False, ctx.parallel)
    by = {(r.cfg.governance, r.cfg.pipeline_kind): r.mean_latency for r in res}
    worst = 0.0
    parts = []
    for k in PIPELINE_KINDS:
        a = by[("A", k)]
        devs = [(by[(g, k)] - a) / a for g in "BCD"]
        worst = max(worst, *(abs(d) for d in devs))
        parts.append(f"{k}:" + "/".join(f"{100 * d:+.2f}%" for d in devs))
    return worst <= 0.01, " ".join(parts)


def check_federation(ctx: Context) -> tuple[bool, str]:
    cells = phase_cells("federation", ctx.base, ctx.knee)
    res = run_grid(cells, None, False, ctx.parallel, keep_runs=True)
    crs = []
    leaks = 0
    for r in res:
        crs.append(r.mean_cr)
        if any(e.kind == "partition-start" for e in r.cfg.failures.events):
            leaks += sum(run.counts.get("cross_site_in_partition", 0) for run in r.runs)
    labels = ["broker-kill", "partition", "worker-kill"]
    per = {lab: min(crs[i * 3:(i + 1) * 3]) for i, lab in enumerate(labels)}
    ok = min(crs) >= 0.98 and leaks == 0
    return ok, (f"lambda={cells[0].lambda_pps:g} min CR " + " ".join(f"{k}={v:.3f}" for k, v in per.items())
                + f" cross-site dispatches in partition={leaks}")


PARITY_RATES = (2.0, 5.0, 10.0)


def check_parity(ctx: Context) -> tuple[bool, str]:
    cells = [ctx.base.with_(strategy=s, pipeline_kind=k, lambda_pps=lam)
             for k in PIPELINE_KINDS for lam in PARITY_RATES for s in ("market", "oracle-sharded")]
    res = run_grid(cells, None, False, ctx.parallel)
    worst = 0.0
    parts = []
    for i in range(0, len(res), 2):
        m, o = res[i].mean_latency, res[i + 1].mean_latency
        dev = (m - o) / o
        worst = max(worst, abs(dev))
        parts.append(f"{res[i].cfg.pipeline_kind}@{res[i].cfg.lambda_pps:g}:{100 * dev:+.2f}%")

    rng = np.random.default_rng(5)
    topo = default_topology()
    exact = 0
    for _ in range(20):
        loads = {w.worker_id: float(rng.uniform(0, 3.5)) for w in topo.workers}
        full = TopologySnapshot(topo, loads)
        pulled = {d: TopologySnapshot(topo, {w.worker_id: loads[w.worker_id] for w in topo.workers_in(d)})
                  for d in topo.domain_ids if d != "d1"}
        own = TopologySnapshot(topo, {w.worker_id: loads[w.worker_id] for w in topo.workers_in("d1")})
        kind = PIPELINE_KINDS[int(rng.integers(0, 3))]
        pipe = build_template(kind)
        exact += (oracle_place(pipe, full).assignment
                  == sharded_oracle_place(pipe, own, pulled, "d1").assignment)
    ok = worst <= 0.02 and exact == 20
    return ok, f"worst |delta|={100 * worst:.2f}% [{' '.join(parts)}]; sharded==oracle on {exact}/20 snapshots"


def check_statistics(ctx: Context) -> tuple[bool, str]:
    p = sign_test([1.0] * 45)
    exact_p = float(Fraction(1, 2 ** 45))
    sign_ok = abs(p - exact_p) <= 1e-20 * exact_p
    hl_ok = hodges_lehmann([1, 3, 5]) == 3
    lo, hi = bootstrap_ci([4.2] * 30, B=500)
    boot_ok = lo == hi and math.isclose(lo, 4.2)
    knee_ok = True
    for k in (3.0, 7.5, 12.2):
        xs = np.arange(1.0, 20.0, 0.5)
        pts = [(x, 1.0 if x <= k else 1.0 - 0.08 * (x - k)) for x in xs]
        fit = knee_fit(pts, bootstrap_B=50)
        if fit.degenerate or abs(fit.breakpoint - k) > 0.1 + 1e-9:
            knee_ok = False
    ok = sign_ok and hl_ok and boot_ok and knee_ok
    return ok, f"sign-test p={p:.4g} hl={hodges_lehmann([1, 3, 5])} bootstrap point:{boot_ok} knee recovery:{knee_ok}"


def _digests(folder: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.glob("*.csv"))}


def check_determinism(ctx: Context) -> tuple[bool, str]:
    cfg = ctx.base.with_(strategy="market", pipeline_kind="ran-entangled", lambda_pps=10.0, seeds=(0, 1))
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        run_cell(cfg, a)
        run_cell(cfg, b, parallel=max(1, ctx.parallel))
        da, db = _digests(a), _digests(b)
    ok = bool(da) and da == db
    return ok, f"{len(da)} files, identical hashes:{da == db}"


CRITERIA: tuple[tuple[int, str, Callable[[Context], tuple[bool, str]]], ...] = (
    (1, "structure", check_structure),
    (2, "polymatroid", check_polymatroid),
    (3, "pricing", check_pricing),
    (4, "oracle", check_oracle),
    (5, "saturation", check_saturation),
    (6, "heterogeneity", check_heterogeneity),
    (7, "governance", check_governance),
    (8, "federation", check_federation),
    (9, "parity", check_parity),
    (10, "statistics", check_statistics),
    (11, "determinism", check_determinism),
)
CRITERION_NAMES = tuple(name for _, name, _ in CRITERIA)


def select(filter_text: str | None) -> list[tuple[int, str, Callable]]:
    if not filter_text:
        return list(CRITERIA)
    wanted = [w.strip() for w in filter_text.split(",") if w.strip()]
    unknown = [w for w in wanted if w not in CRITERION_NAMES and not w.isdigit()]
    if unknown:
        raise ConfigError(f"unknown criterion {unknown[0]!r}; expected one of {', '.join(CRITERION_NAMES)}")
    return [c for c in CRITERIA if c[1] in wanted or str(c[0]) in wanted]


def run_acceptance(filter_text: str | None = None, parallel: int = 1,
                   log: Callable[[str], None] = print, ctx: Context | None = None) -> list[CriterionResult]:
    """Run the selected criteria, printing one line per criterion as it finishes."""
    ctx = ctx or Context(parallel=parallel)
    out = []
    for number, name, fn in select(filter_text):
        t0 = time.perf_counter()
        try:
            ok, detail = fn(ctx)
        except Exception as exc:  # a crash is a failed criterion, not an aborted suite
            ok, detail = False, f"error: {type(exc).__name__}: {exc}"
        res = CriterionResult(number, name, ok, detail, time.perf_counter() - t0)
        log(res.line())
        out.append(res)
    passed = sum(r.passed for r in out)
    log(f"{passed}/{len(out)} criteria passed")
    return out
