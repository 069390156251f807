"""Campaign metrics and the statistics used to compare strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

TIE_THRESHOLD_MS = 1.0
KNEE_GRID_STEP = 0.1


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile of already sorted data, ``q`` in (0, 1]."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    k = max(1, math.ceil(q * n - 1e-12))
    return float(sorted_values[min(k, n) - 1])


@dataclass(frozen=True)
class CellSummary:
    strategy: str
    pipeline_kind: str
    lambda_pps: float
    seed: int
    n_events: int
    completion_rate: float
    mean_latency_ms: float | None
    p50_ms: float | None
    p95_ms: float | None
    p99_ms: float | None


def summarize_latencies(latencies: Sequence[float], n_events: int, strategy: str = "", kind: str = "",
                        lam: float = 0.0, seed: int = 0) -> CellSummary:
    if n_events <= 0:
        raise ValueError("empty cell")
    lat = sorted(float(x) for x in latencies)
    cr = len(lat) / n_events
    if not lat:
        return CellSummary(strategy, kind, lam, seed, n_events, 0.0, None, None, None, None)
    return CellSummary(strategy, kind, lam, seed, n_events, cr, float(np.mean(lat)),
                       nearest_rank(lat, 0.50), nearest_rank(lat, 0.95), nearest_rank(lat, 0.99))


def summarize(run) -> CellSummary:
    """Summary of one :class:`RunRecord` (latency over completed pipelines)."""
    m = run.meta
    lat = [r.end_to_end_latency_ms for r in run.rows if r.completed]
    return summarize_latencies(lat, len(run.rows), m["strategy"], m["pipeline_kind"], m["lambda_pps"], m["seed"])


def sign_test(diffs: Iterable[float], direction: str = "greater") -> float:
    """One-tailed paired sign test, P(X >= wins) under Binomial(n, 1/2).

    A win is a positive difference for ``direction="greater"`` and a
    negative one for ``"less"``; zero differences are dropped.
    """
    if direction not in ("greater", "less"):
        raise ValueError("direction must be 'greater' or 'less'")
    d = [x for x in diffs if x != 0]
    n = len(d)
    if n == 0:
        raise ValueError("sign test needs at least one non-zero difference")
    wins = sum(1 for x in d if (x > 0) == (direction == "greater"))
    tail = sum(math.comb(n, k) for k in range(wins, n + 1))
    return float(Fraction(tail, 2 ** n))


def hodges_lehmann(diffs: Sequence[float]) -> float:
    """Median of the Walsh averages (x_i + x_j) / 2 over i <= j."""
    x = np.asarray(diffs, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    i, j = np.triu_indices(x.size)
    return float(np.median((x[i] + x[j]) / 2.0))


def bootstrap_ci(
    values: Sequence[float],
    statistic: Callable[[np.ndarray], float] = np.mean,
    B: int = 10_000,
    level: float = 0.95,
    rng_seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval using nearest-rank bounds."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, x.size, size=(B, x.size))
    stats = np.sort(np.array([statistic(x[row]) for row in idx]))
    alpha = (1.0 - level) / 2.0
    return nearest_rank(stats, alpha), nearest_rank(stats, 1.0 - alpha)


# ---------------------------------------------------------------------------
# knee
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KneeFit:
    breakpoint: float | None
    ci: tuple[float, float] | None
    sse: float
    degenerate: bool
    slopes: tuple[float, float] | None = None


def _hinge_sse(lam: np.ndarray, y: np.ndarray, k: float) -> tuple[float, np.ndarray]:
    X = np.column_stack([np.ones_like(lam), lam, np.maximum(lam - k, 0.0)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r), coef


def _fit_once(lam: np.ndarray, y: np.ndarray, step: float):
    lo, hi = lam.min(), lam.max()
    grid = np.round(np.arange(math.ceil(lo / step) * step, hi + step / 2, step), 10)
    grid = grid[(grid > lo) & (grid < hi)]
    if grid.size == 0:
        return None
    best = None
    for k in grid:
        sse, coef = _hinge_sse(lam, y, float(k))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, float(k), coef)
    return best


def knee_fit(points: Sequence[tuple[float, float]], bootstrap_B: int = 1000, rng_seed: int = 0,
             step: float = KNEE_GRID_STEP, level: float = 0.95) -> KneeFit:
    """Continuous two-segment least-squares fit of CR against lambda.

    The breakpoint is searched on a ``step`` grid strictly inside the data
    range.  A fit whose slope change is negligible (for example flat data)
    is flagged degenerate and reports no knee.  The interval comes from
    resampling the points with replacement.
    """
    if len(points) < 4:
        raise ValueError("knee_fit needs at least 4 points")
    lam = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    best = _fit_once(lam, y, step)
    if best is None:
        raise ValueError("points must span more than one grid step")
    sse, k, coef = best
    scale = max(1.0, float(np.abs(y).max()))

    def flat(c, x) -> bool:
        return abs(c[2]) * (x.max() - x.min()) < 1e-6 * scale

    if flat(coef, lam):
        return KneeFit(None, None, sse, True)
    rng = np.random.default_rng(rng_seed)
    boots = []
    for _ in range(bootstrap_B):
        idx = rng.integers(0, len(lam), size=len(lam))
        if len(np.unique(lam[idx])) < 3:
            continue
        b = _fit_once(lam[idx], y[idx], step)
        # a resample without the bend has no knee to report
        if b is not None and not flat(b[2], lam[idx]):
            boots.append(b[1])
    ci = None
    if boots:
        boots.sort()
        a = (1 - level) / 2
        ci = (nearest_rank(boots, a), nearest_rank(boots, 1 - a))
    return KneeFit(k, ci, sse, False, (float(coef[1]), float(coef[1] + coef[2])))


# ---------------------------------------------------------------------------
# efficiency and comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EfficiencyReport:
    eta_market: float
    eta_oracle: float
    delta_eff: float


def welfare(costs_of_completed: Iterable[float], pipeline_value: float) -> float:
    """Sum over completed pipelines of value minus placement cost."""
    return float(sum(pipeline_value - c for c in costs_of_completed))


def efficiency_gap(eta_market: float, eta_oracle: float) -> EfficiencyReport:
    if eta_oracle <= 0:
        raise ValueError("oracle welfare must be positive")
    return EfficiencyReport(eta_market, eta_oracle, 1.0 - eta_market / eta_oracle)


def efficiency_from_runs(market_runs, oracle_runs, pipeline_value: float) -> EfficiencyReport:
    def eta(runs):
        return sum(welfare([r.placement_cost for r in run.rows if r.completed], pipeline_value) for run in runs)
    return efficiency_gap(eta(market_runs), eta(oracle_runs))


@dataclass(frozen=True)
class Comparison:
    wins: int
    losses: int
    ties: int
    diffs: tuple[float, ...]


def compare_means(a: Sequence[float], b: Sequence[float], tie_ms: float = TIE_THRESHOLD_MS) -> Comparison:
    """Paired per-cell comparison of mean latencies; a win means ``a`` is lower."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    diffs = tuple(float(x - y) for x, y in zip(a, b))
    wins = sum(1 for d in diffs if d <= -tie_ms)
    losses = sum(1 for d in diffs if d >= tie_ms)
    return Comparison(wins, losses, len(diffs) - wins - losses, diffs)


def comparison_report(label_a: str, label_b: str, a: Sequence[float], b: Sequence[float],
                      tie_ms: float = TIE_THRESHOLD_MS, B: int = 10_000, seed: int = 0) -> str:
    c = compare_means(a, b, tie_ms)
    lines = [f"{label_a} vs {label_b}: {c.wins} wins, {c.losses} losses, {c.ties} ties (|diff| < {tie_ms} ms)"]
    nonzero = [d for d in c.diffs if d != 0]
    if nonzero:
        lines.append(f"sign test p (one-tailed, {label_a} lower) = {sign_test(nonzero, 'less'):.3g}")
        lo, hi = bootstrap_ci(c.diffs, hodges_lehmann, B=min(B, 2000), rng_seed=seed)
        lines.append(f"Hodges-Lehmann difference = {hodges_lehmann(c.diffs):.2f} ms, 95% CI [{lo:.2f}, {hi:.2f}]")
    return "\n".join(lines)
