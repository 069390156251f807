"""Scenario files, per-cell CSV output and campaign phase drivers.

A scenario file is INI text::

    [scenario]
    schema_version = 1
    strategy = market
    pipeline_kind = cqi-chain
    governance = A

    [workload]
    lambda = 5
    seeds = 0,1,2

Every key is validated; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dag import PIPELINE_KINDS, ConfigError
from .federation import FederationConfig
from .market import MarketConfig
from .simnet import (
    FailureEvent,
    FailurePlan,
    RunRecord,
    SimConfig,
    WorkloadConfig,
    run_sim,
)
from .stats import CellSummary, comparison_report, knee_fit, summarize, summarize_latencies
from .strategies import STRATEGY_NAMES
from .topology import SCENARIO_ENFORCERS, LatencyModel

SCHEMA_VERSION = 1
ROWS_HEADER = f"# fedplace-rows v{SCHEMA_VERSION}"
SUMMARY_HEADER = f"# fedplace-summary v{SCHEMA_VERSION}"
ROW_COLUMNS = (
    "pipeline_id", "arrival_time", "strategy", "accepted", "completed", "end_to_end_latency_ms",
    "domains_crossed", "placement_cost", "reject_reason", "seed", "lambda", "pipeline_kind", "scenario",
)
SUMMARY_COLUMNS = (
    "strategy", "pipeline_kind", "lambda", "seed", "n_events", "completion_rate",
    "mean_latency_ms", "p50_ms", "p95_ms", "p99_ms",
)

_SCHEMA: dict[str, dict[str, type]] = {
    "scenario": {"schema_version": int, "strategy": str, "pipeline_kind": str, "governance": str,
                 "output_dir": str},
    "workload": {"lambda": float, "seeds": str, "duration_s": float, "warmup_s": float,
                 "deadline_s": float, "heterogeneity": bool, "workers_per_domain": int,
                 "capacity": float, "base_service_ms": float},
    "latency": {"lan_ms": float, "wan_ms": float, "wan_jitter_ms": float},
    "market": {"wan_cost": float, "lan_cost": float, "budget_multiplier": float,
               "price_reservations": bool},
    "federation": {"delta_prop": float, "delta_health": float, "tau_fed": float, "k_miss": int,
                   "recovery_probe_every": int},
    "failures": {"events": str},
}


@dataclass(frozen=True)
class ScenarioConfig:
    strategy: str = "market"
    pipeline_kind: str = "cqi-chain"
    lambda_pps: float = 5.0
    seeds: tuple[int, ...] = (0,)
    duration_s: float = 90.0
    warmup_s: float = 30.0
    deadline_s: float = 10.0
    governance: str = "A"
    heterogeneity: bool = False
    failures: FailurePlan = FailurePlan()
    latency: LatencyModel = LatencyModel()
    market: MarketConfig = MarketConfig()
    federation: FederationConfig = FederationConfig()
    workers_per_domain: int = 12
    capacity: float = 4.0
    base_service_ms: float = 220.0
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.pipeline_kind not in PIPELINE_KINDS:
            raise ConfigError(f"unknown pipeline_kind {self.pipeline_kind!r}")
        if self.governance not in SCENARIO_ENFORCERS:
            raise ConfigError(f"unknown governance scenario {self.governance!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        # surfaces workload errors early
        WorkloadConfig(self.lambda_pps, self.duration_s, self.warmup_s, self.pipeline_kind, self.seeds[0])

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(
            WorkloadConfig(self.lambda_pps, self.duration_s, self.warmup_s, self.pipeline_kind, seed),
            strategy=self.strategy, scenario=self.governance, failures=self.failures,
            workers_per_domain=self.workers_per_domain, capacity=self.capacity,
            base_service_ms=self.base_service_ms, deadline_s=self.deadline_s,
            heterogeneity=self.heterogeneity, latency=self.latency, federation=self.federation,
            market=self.market,
        )

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_failures(text: str) -> FailurePlan:
    """``"300:worker-kill:d3; 60:partition-start"`` into a plan."""
    events = []
    for chunk in [c.strip() for c in text.split(";") if c.strip()]:
        parts = chunk.split(":", 2)
        if len(parts) < 2:
            raise ConfigError(f"bad failure event {chunk!r}")
        try:
            t = float(parts[0])
        except ValueError as exc:
            raise ConfigError(f"bad failure time in {chunk!r}") from exc
        events.append(FailureEvent(t, parts[1].strip(), parts[2].strip() if len(parts) > 2 else ""))
    return FailurePlan(tuple(events))


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    values: dict[str, dict[str, object]] = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        values[sec] = {}
        for key, raw in cp.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            typ = _SCHEMA[sec][key]
            try:
                values[sec][key] = _parse_bool(raw) if typ is bool else typ(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    sc = values.get("scenario", {})
    if sc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"[scenario] schema_version must be {SCHEMA_VERSION}")
    wl = values.get("workload", {})
    kw: dict[str, object] = {}
    for src, dst in (("strategy", "strategy"), ("pipeline_kind", "pipeline_kind"),
                     ("governance", "governance"), ("output_dir", "output_dir")):
        if src in sc:
            kw[dst] = sc[src]
    for src, dst in (("lambda", "lambda_pps"), ("duration_s", "duration_s"), ("warmup_s", "warmup_s"),
                     ("deadline_s", "deadline_s"), ("heterogeneity", "heterogeneity"),
                     ("workers_per_domain", "workers_per_domain"), ("capacity", "capacity"),
                     ("base_service_ms", "base_service_ms")):
        if src in wl:
            kw[dst] = wl[src]
    if "seeds" in wl:
        kw["seeds"] = parse_seeds(str(wl["seeds"]))
    if "latency" in values:
        kw["latency"] = replace(LatencyModel(), **values["latency"])
    if "market" in values:
        kw["market"] = replace(MarketConfig(), **values["market"])
    if "federation" in values:
        kw["federation"] = replace(FederationConfig(), **values["federation"])
    if "failures" in values:
        kw["failures"] = parse_failures(str(values["failures"].get("events", "")))
    return ScenarioConfig(**kw)


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"`` or a range ``"0-4"``."""
    out: list[int] = []
    for part in [p.strip() for p in text.split(",") if p.strip()]:
        try:
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"bad seed list {text!r}") from exc
    if not out:
        raise ConfigError("empty seed list")
    return tuple(out)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isinf(v) or math.isnan(v):
            return str(v)
        return f"{v:.6f}"
    return str(v)


def rows_csv(run: RunRecord) -> str:
    buf = io.StringIO()
    buf.write(ROWS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_COLUMNS)
    m = run.meta
    for r in run.rows:
        w.writerow([_fmt(x) for x in (
            r.pipeline_id, r.arrival_time, r.strategy, r.accepted, r.completed, r.end_to_end_latency_ms,
            r.domains_crossed, r.placement_cost, r.reject_reason, m["seed"], float(m["lambda_pps"]),
            m["pipeline_kind"], m["scenario"],
        )])
    return buf.getvalue()


def summary_csv(summaries: Sequence[CellSummary]) -> str:
    buf = io.StringIO()
    buf.write(SUMMARY_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        w.writerow([_fmt(x) for x in (
            s.strategy, s.pipeline_kind, float(s.lambda_pps), s.seed, s.n_events, s.completion_rate,
            s.mean_latency_ms, s.p50_ms, s.p95_ms, s.p99_ms,
        )])
    return buf.getvalue()


def read_rows(path: str | os.PathLike) -> list[dict[str, str]]:
    """Parse a rows file, checking the versioned header."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != ROWS_HEADER:
            raise ConfigError(f"{path}: unexpected header {first!r}")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_COLUMNS:
            raise ConfigError(f"{path}: column mismatch")
        return list(reader)


def cell_stem(strategy: str, kind: str, lam: float, seed: int | str) -> str:
    return f"{strategy}_{kind}_{lam:g}_{seed}"


def _run_seed(args: tuple[ScenarioConfig, int]) -> RunRecord:
    cfg, seed = args
    return run_sim(cfg.sim_config(seed))


def run_records(cfg: ScenarioConfig, parallel: int = 1) -> list[RunRecord]:
    jobs = [(cfg, s) for s in cfg.seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_seed, jobs))
    return [_run_seed(j) for j in jobs]


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_cell(cfg: ScenarioConfig, out_dir: str | os.PathLike | None = None, force: bool = False,
             parallel: int = 1) -> tuple[list[Path], list[CellSummary], list[RunRecord]]:
    """Run every seed of one cell and write per-seed rows plus a pooled summary.

    Refuses to overwrite existing files unless ``force``; nothing is
    written if any target exists or any run fails.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets = [out / f"{cell_stem(cfg.strategy, cfg.pipeline_kind, cfg.lambda_pps, s)}.csv" for s in cfg.seeds]
    summary_path = out / f"{cell_stem(cfg.strategy, cfg.pipeline_kind, cfg.lambda_pps, 'summary')}.csv"
    if not force:
        clash = [p for p in [*targets, summary_path] if p.exists()]
        if clash:
            raise FileExistsError(f"{clash[0]} exists (use --force to overwrite)")
    runs = run_records(cfg, parallel)
    summaries = [summarize(r) for r in runs]
    pooled = pooled_summary(runs)
    for path, run in zip(targets, runs):
        _atomic_write(path, rows_csv(run))
    _atomic_write(summary_path, summary_csv([*summaries, pooled]))
    return [*targets, summary_path], summaries, runs


def pooled_summary(runs: Sequence[RunRecord]) -> CellSummary:
    """Success-only pooling of all seeds; ``seed`` is reported as -1."""
    lat = [x for r in runs for x in r.latencies().tolist()]
    n = sum(len(r.rows) for r in runs)
    m = runs[0].meta
    return summarize_latencies(lat, n, m["strategy"], m["pipeline_kind"], m["lambda_pps"], -1)


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

PHASES = ("allocation-grid", "governance-grid", "saturation", "failure-load", "heterogeneity",
          "federation", "knee-calibration")

# arrival-rate fractions of the calibrated knee; the low-load grids use
# absolute rates
SATURATION_FRACTIONS = (0.36, 0.58, 0.72, 1.1, 3.6)
KNEE_SWEEP_FRACTIONS = (0.3, 0.45, 0.55, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0, 1.1, 1.25, 1.5)


def capacity_estimate(cfg: ScenarioConfig) -> float:
    """Pipelines per second the worker pool could serve if perfectly packed."""
    from .dag import build_template

    n_stages = len(build_template(cfg.pipeline_kind).stages)
    servers = 4 * cfg.workers_per_domain * max(1, int(cfg.capacity))
    return servers / (cfg.base_service_ms / 1000.0) / n_stages


@dataclass
class CellResult:
    cfg: ScenarioConfig
    summaries: list[CellSummary]
    pooled: CellSummary
    runs: list[RunRecord] = field(default_factory=list, repr=False)

    @property
    def mean_cr(self) -> float:
        return float(np.mean([s.completion_rate for s in self.summaries]))

    @property
    def mean_latency(self) -> float:
        return self.pooled.mean_latency_ms if self.pooled.mean_latency_ms is not None else float("nan")


def run_grid(cells: Sequence[ScenarioConfig], out_dir: Path | None, force: bool, parallel: int,
             keep_runs: bool = False) -> list[CellResult]:
    results = []
    jobs = [(c, s) for c in cells for s in c.seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            flat = list(pool.map(_run_seed, jobs))
    else:
        flat = [_run_seed(j) for j in jobs]
    i = 0
    for c in cells:
        runs = flat[i:i + len(c.seeds)]
        i += len(c.seeds)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            for s, r in zip(c.seeds, runs):
                p = out_dir / f"{cell_stem(c.strategy, c.pipeline_kind, c.lambda_pps, s)}.csv"
                if p.exists() and not force:
                    raise FileExistsError(f"{p} exists (use --force to overwrite)")
                _atomic_write(p, rows_csv(r))
        results.append(CellResult(c, [summarize(r) for r in runs], pooled_summary(runs),
                                  list(runs) if keep_runs else []))
    if out_dir is not None:
        _atomic_write(out_dir / "summary.csv", summary_csv([r.pooled for r in results]))
    return results


def calibrate_knee(base: ScenarioConfig, parallel: int = 1, out_dir: Path | None = None,
                   force: bool = False, strategy: str = "rr-global", bootstrap_B: int = 500):
    """Sweep arrival rates for ``strategy`` and fit the CR knee."""
    cap = capacity_estimate(base)
    lams = [round(cap * f, 1) for f in KNEE_SWEEP_FRACTIONS]
    cells = [base.with_(strategy=strategy, lambda_pps=lam) for lam in lams]
    res = run_grid(cells, out_dir, force, parallel)
    points = [(r.cfg.lambda_pps, r.mean_cr) for r in res]
    return knee_fit(fit_window(points), bootstrap_B=bootstrap_B, rng_seed=0), points


CR_FLOOR = 0.1


def fit_window(points: Sequence[tuple[float, float]], floor: float = CR_FLOOR) -> list[tuple[float, float]]:
    """Sweep points up to and including the first one at the CR floor.

    Past the collapse the curve sits flat near zero, which a two-segment
    line cannot follow; keeping that tail drags the breakpoint to the right.
    At least four points are kept so the fit stays defined.
    """
    pts = sorted(points)
    for i, (_, cr) in enumerate(pts):
        if cr < floor:
            return pts[:max(i + 1, 4)]
    return pts


def phase_cells(phase: str, base: ScenarioConfig, knee: float | None = None) -> list[ScenarioConfig]:
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}; expected one of {', '.join(PHASES)}")
    kinds = PIPELINE_KINDS
    if phase == "allocation-grid":
        return [base.with_(strategy=s, pipeline_kind=k, lambda_pps=lam)
                for s in STRATEGY_NAMES for k in kinds for lam in (2.0, 5.0, 10.0)]
    if phase == "governance-grid":
        return [base.with_(strategy="market", pipeline_kind=k, lambda_pps=5.0, governance=g)
                for g in ("A", "B", "C", "D") for k in kinds]
    if phase == "heterogeneity":
        return [base.with_(strategy=s, pipeline_kind=k, lambda_pps=5.0, heterogeneity=True)
                for s in ("market", "rr-global") for k in kinds]
    if knee is None:
        raise ConfigError(f"phase {phase} needs a knee estimate")
    if phase == "saturation":
        return [base.with_(strategy=s, lambda_pps=round(knee * f, 1))
                for s in ("market", "rr-global") for f in SATURATION_FRACTIONS]
    half = base.duration_s / 2
    if phase == "failure-load":
        plan = FailurePlan((FailureEvent(half, "worker-kill", "d3"),))
        return [base.with_(strategy="market", pipeline_kind=k, lambda_pps=round(knee * f, 1), failures=plan)
                for k in kinds for f in (0.2, 0.35, 0.5)]
    # federation
    lam = round(0.5 * knee, 1)
    plans = {
        "broker-kill": FailurePlan((FailureEvent(half, "broker-kill", "d2"),)),
        "partition": FailurePlan((FailureEvent(base.warmup_s, "partition-start"),
                                  FailureEvent(min(base.warmup_s + 120.0, base.duration_s), "partition-end"))),
        "worker-kill": FailurePlan((FailureEvent(half, "worker-kill", "d3"),)),
    }
    return [base.with_(strategy="market", pipeline_kind=k, lambda_pps=lam, failures=p)
            for p in plans.values() for k in kinds]


def run_phase(phase: str, base: ScenarioConfig, out_dir: Path | None = None, force: bool = False,
              parallel: int = 1, knee: float | None = None, log: Callable[[str], None] = print) -> str:
    """Run one campaign phase and return its text report."""
    lines = [f"phase {phase}"]
    if phase == "knee-calibration":
        fit, points = calibrate_knee(base, parallel, out_dir, force)
        for lam, cr in points:
            lines.append(f"  lambda={lam:g} CR={cr:.3f}")
        if fit.degenerate:
            lines.append("  no knee: CR curve is flat")
        else:
            lines.append(f"  knee = {fit.breakpoint:.1f} pps, 95% CI [{fit.ci[0]:.1f}, {fit.ci[1]:.1f}]")
        return "\n".join(lines)
    if phase in ("saturation", "failure-load", "federation") and knee is None:
        fit, _ = calibrate_knee(base, parallel)
        if fit.degenerate:
            raise ConfigError("knee calibration found no knee")
        knee = fit.breakpoint
        lines.append(f"  knee = {knee:.1f} pps")
    cells = phase_cells(phase, base, knee)
    results = run_grid(cells, out_dir, force, parallel)
    for r in results:
        c = r.cfg
        tag = f"{c.strategy:>14} {c.pipeline_kind:<13} lambda={c.lambda_pps:<6g} gov={c.governance}"
        if c.failures.events:
            tag += " " + "+".join(e.kind for e in c.failures.events)
        lines.append(f"  {tag} CR={r.mean_cr:.3f} mean={r.mean_latency:.1f} ms")
    if phase == "allocation-grid":
        by = {(r.cfg.strategy, r.cfg.pipeline_kind, r.cfg.lambda_pps): r for r in results}
        keys = [(k, lam) for k in PIPELINE_KINDS for lam in (2.0, 5.0, 10.0)]
        for other in STRATEGY_NAMES:
            if other == "market":
                continue
            a = [s.mean_latency_ms or math.nan for k, lam in keys for s in by[("market", k, lam)].summaries]
            b = [s.mean_latency_ms or math.nan for k, lam in keys for s in by[(other, k, lam)].summaries]
            lines.append(comparison_report("market", other, a, b))
    return "\n".join(lines)
