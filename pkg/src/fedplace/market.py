"""Market mechanism: speed-scaled bids, congestion costs, clearing prices,
the cross-domain trade rule, the within-round reservation ledger and the
per-pipeline placement procedure run by each broker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .dag import ConfigError, PipelineTemplate, StageSpec, topo_order
from .topology import (
    NO_GOVERNANCE,
    GovernancePolicy,
    PlacementDecision,
    Topology,
    TopologySnapshot,
    WorkerSpec,
    domains_touched,
    eligible,
)

UTILISATION_CAP = 0.99


@dataclass(frozen=True)
class WorkerBid:
    worker_id: int
    stage_type: str
    bid: float
    cost: float


@dataclass(frozen=True)
class ClearingPriceTable:
    prices: dict[str, float]
    demand_used: dict[str, int]
    computed_at: float = 0.0
    priced_worker: dict[str, int | None] = field(default_factory=dict)

    def price(self, stage_type: str) -> float:
        return self.prices.get(stage_type, math.inf)


@dataclass(frozen=True)
class PriceSignalMsg:
    origin_domain: str
    prices: dict[str, float]
    issued_at: float


@dataclass
class ReservationLedger:
    additions: dict[int, float] = field(default_factory=dict)

    def added(self, worker_id: int) -> float:
        return self.additions.get(worker_id, 0.0)

    def release(self, worker_id: int, demand: float) -> None:
        left = self.additions.get(worker_id, 0.0) - demand
        if left > 1e-12:
            self.additions[worker_id] = left
        else:
            self.additions.pop(worker_id, None)

    def commit(self) -> None:
        self.additions.clear()


@dataclass(frozen=True)
class MarketConfig:
    wan_cost: float = 10.0
    lan_cost: float = 0.0
    utilisation_cap: float = UTILISATION_CAP
    budget_multiplier: float = 10.0
    # price each candidate at reported load plus this round's reservations;
    # off prices at the reported load alone
    price_reservations: bool = True

    def __post_init__(self) -> None:
        if self.wan_cost < 0 or self.lan_cost < 0:
            raise ConfigError("transfer costs must be >= 0")
        if not 0 < self.utilisation_cap < 1:
            raise ConfigError("utilisation_cap must lie in (0, 1)")


def speed_scaled_bid(base_bid: float, speed: float) -> float:
    if base_bid <= 0 or speed <= 0:
        raise ValueError("base_bid and speed must be > 0")
    return base_bid * speed


def worker_cost(bid: float, load: float, capacity: float, cap: float = UTILISATION_CAP) -> float:
    """M/M/1 sojourn-style cost bid / (1 - rho), rho capped at ``cap``."""
    rho = max(load, 0.0) / capacity
    if rho >= cap:
        # 1 - 0.99 is not 0.01 in binary floating point; the saturated
        # multiplier is rounded so that a full worker costs exactly 100 b
        return bid * round(1.0 / (1.0 - cap), 9)
    return bid / (1.0 - rho)


def make_bids(
    workers: Iterable[WorkerSpec],
    loads: Mapping[int, float],
    stage_type: str,
    stage: StageSpec | None = None,
    cap: float = UTILISATION_CAP,
) -> list[WorkerBid]:
    """Bids of every worker eligible for ``stage`` (slice filter)."""
    out = []
    for w in workers:
        if stage is not None and not eligible(w, stage):
            continue
        b = speed_scaled_bid(w.base_bid, w.speed)
        out.append(WorkerBid(w.worker_id, stage_type, b,
                             worker_cost(b, loads.get(w.worker_id, 0.0), w.capacity, cap)))
    return out


def clearing_prices(
    bids: Mapping[str, Sequence[WorkerBid]],
    demand: Mapping[str, int],
    now: float = 0.0,
) -> ClearingPriceTable:
    """Per-type price = cost of the d-th cheapest bid, d = min(demand, supply).

    Equal costs are ordered by worker id.  Zero observed demand prices at the
    cheapest bid; a type with no bids is unavailable (infinite price).
    """
    prices: dict[str, float] = {}
    used: dict[str, int] = {}
    priced: dict[str, int | None] = {}
    for stype in set(bids) | set(demand):
        ranked = sorted(bids.get(stype, ()), key=lambda b: (b.cost, b.worker_id))
        if not ranked:
            prices[stype] = math.inf
            used[stype] = 0
            priced[stype] = None
            continue
        d = max(1, min(int(demand.get(stype, 0)), len(ranked)))
        prices[stype] = ranked[d - 1].cost
        used[stype] = d
        priced[stype] = ranked[d - 1].worker_id
    return ClearingPriceTable(prices, used, now, priced)


@dataclass(frozen=True)
class Trade:
    remote: bool
    domain: str | None = None


LOCAL = Trade(False, None)


def trade_decision(
    stage_type: str,
    local_price: float,
    peer_signals: Iterable[PriceSignalMsg],
    wan_cost: float,
    transfer_cost: Mapping[str, float] | None = None,
) -> Trade:
    """Go remote iff some peer's price plus transfer cost undercuts local.

    ``transfer_cost`` overrides ``wan_cost`` per peer (e.g. same-site
    peers).  The cheapest peer wins, ties by domain id; ties with the local
    price stay local.
    """
    best: tuple[float, str] | None = None
    for sig in peer_signals:
        p = sig.prices.get(stage_type, math.inf)
        if math.isinf(p):
            continue
        w = wan_cost if transfer_cost is None else transfer_cost.get(sig.origin_domain, wan_cost)
        cand = (p + w, sig.origin_domain)
        if best is None or cand < best:
            best = cand
    if best is not None and best[0] < local_price:
        return Trade(True, best[1])
    return LOCAL


def reserve(
    ledger: ReservationLedger,
    worker: WorkerSpec,
    load: float,
    demand: float,
) -> bool:
    """Accept iff demand <= capacity - load - already reserved this round."""
    if demand <= 0:
        raise ValueError("demand must be > 0")
    if demand <= worker.capacity - load - ledger.added(worker.worker_id) + 1e-12:
        ledger.additions[worker.worker_id] = ledger.added(worker.worker_id) + demand
        return True
    return False


# ---------------------------------------------------------------------------
# Algorithm: market placement of one pipeline
# ---------------------------------------------------------------------------


@dataclass
class DomainMarket:
    """One domain's view used when placing stages inside it."""

    domain: str
    workers: list[WorkerSpec]
    loads: dict[int, float]
    ledger: ReservationLedger

    def assign(self, stage: StageSpec, cap: float = UTILISATION_CAP,
               price_reservations: bool = True) -> tuple[int, float] | None:
        """Cheapest feasible worker (ties by id); reserves it on success.

        Costs count the reported load plus this round's reservations, so
        successive stages see the congestion they add.  Without
        ``price_reservations`` costs use the reported load alone and the
        ledger only decides whether the stage still fits.
        """
        if price_reservations:
            view = {w.worker_id: self.loads.get(w.worker_id, 0.0) + self.ledger.added(w.worker_id)
                    for w in self.workers}
        else:
            view = self.loads
        ranked = sorted(
            make_bids(self.workers, view, stage.stage_type, stage, cap),
            key=lambda b: (b.cost, b.worker_id),
        )
        by_id = {w.worker_id: w for w in self.workers}
        for b in ranked:
            if reserve(self.ledger, by_id[b.worker_id], self.loads.get(b.worker_id, 0.0), stage.demand):
                return b.worker_id, b.cost
        return None

    def prices(self, stages: Iterable[StageSpec], demand: Mapping[str, int], now: float = 0.0,
               cap: float = UTILISATION_CAP) -> ClearingPriceTable:
        bids = {}
        for s in stages:
            bids[s.stage_type] = make_bids(self.workers, self.loads, s.stage_type, s, cap)
        return clearing_prices(bids, demand, now)


RemoteAssign = Callable[[str, StageSpec], "tuple[int, float] | None"]


def market_place(
    pipeline: PipelineTemplate,
    origin: str,
    local: DomainMarket,
    peer_signals: Sequence[PriceSignalMsg],
    config: MarketConfig = MarketConfig(),
    gov: GovernancePolicy = NO_GOVERNANCE,
    remote_assign: RemoteAssign | None = None,
    topology: Topology | None = None,
    demand: Mapping[str, int] | None = None,
    local_prices: ClearingPriceTable | None = None,
) -> PlacementDecision:
    """Place one pipeline at broker ``origin``.

    Stages are visited in Kahn order.  For each stage the local clearing
    price is compared with peer prices plus transfer cost; the stage then
    goes to the cheapest feasible worker of the chosen domain.  Remote
    assignment is delegated to ``remote_assign(domain, stage)`` (the peer
    broker picks the worker); a refused remote request falls back to local,
    then to the remaining peers in price order.  Sovereignty-pinned stages
    never leave ``origin``.
    """
    demand = dict(demand) if demand is not None else _pipeline_demand(pipeline)
    table = local_prices or local.prices(pipeline.stages, demand, cap=config.utilisation_cap)
    transfer = _transfer_costs(origin, peer_signals, config, topology)
    signals = [s for s in peer_signals if s.origin_domain != origin]

    assignment: dict[int, int] = {}
    total = 0.0
    remote_used: list[tuple[str, int, float]] = []
    for sid in topo_order(pipeline):
        stage = pipeline.stage(sid)
        allowed = [s for s in signals if gov.allows(stage, origin, s.origin_domain)]
        trade = trade_decision(stage.stage_type, table.price(stage.stage_type), allowed,
                               config.wan_cost, transfer)
        order: list[str | None] = []
        if trade.remote:
            order.append(trade.domain)
        order.append(None)
        rest = sorted(
            (s.prices.get(stage.stage_type, math.inf) + transfer.get(s.origin_domain, config.wan_cost),
             s.origin_domain)
            for s in allowed
            if s.origin_domain != trade.domain
        )
        order.extend(d for p, d in rest if not math.isinf(p))

        placed = None
        for dom in order:
            if dom is None:
                got = local.assign(stage, config.utilisation_cap, config.price_reservations)
                if got is not None:
                    placed = (got[0], got[1])
                    break
            elif remote_assign is not None:
                got = remote_assign(dom, stage)
                if got is not None:
                    placed = (got[0], got[1] + transfer.get(dom, config.wan_cost))
                    remote_used.append((dom, got[0], stage.demand))
                    break
        if placed is None:
            _rollback(local, pipeline, assignment, remote_used)
            return PlacementDecision.rejected("infeasible")
        assignment[sid] = placed[0]
        total += placed[1]

    if total > pipeline.value_budget:
        _rollback(local, pipeline, assignment, remote_used)
        return PlacementDecision.rejected("over-budget")
    crossed = domains_touched(assignment, topology) if topology is not None else 0
    return PlacementDecision(assignment=assignment, total_cost=total, domains_crossed=crossed,
                             market_cost=total)


def _pipeline_demand(pipeline: PipelineTemplate) -> dict[str, int]:
    out: dict[str, int] = {}
    for s in pipeline.stages:
        out[s.stage_type] = out.get(s.stage_type, 0) + 1
    return out


def _transfer_costs(origin: str, signals: Iterable[PriceSignalMsg], config: MarketConfig,
                    topology: Topology | None) -> dict[str, float]:
    out = {}
    for s in signals:
        if topology is not None and topology.same_site(origin, s.origin_domain):
            out[s.origin_domain] = config.lan_cost
        else:
            out[s.origin_domain] = config.wan_cost
    return out


def _rollback(local: DomainMarket, pipeline: PipelineTemplate, assignment: Mapping[int, int],
              remote_used) -> None:
    # reservations made by this pipeline only; peers roll back via their own hook
    local_ids = {w.worker_id for w in local.workers}
    for sid, wid in assignment.items():
        if wid in local_ids:
            local.ledger.release(wid, pipeline.stage(sid).demand)
    for dom, wid, demand in remote_used:
        hook = getattr(local, "remote_release", None)
        if hook is not None:
            hook(dom, wid, demand)


def snapshot_remote_assign(
    snapshot: TopologySnapshot, ledgers: dict[str, ReservationLedger] | None = None,
    cap: float = UTILISATION_CAP,
    price_reservations: bool = True,
) -> RemoteAssign:
    """Remote assignment against a full snapshot (for tests and offline use)."""
    ledgers = ledgers if ledgers is not None else {}

    def assign(domain: str, stage: StageSpec):
        ws = [w for w in snapshot.workers if w.domain == domain]
        ledger = ledgers.setdefault(domain, ReservationLedger())
        return DomainMarket(domain, ws, snapshot.loads, ledger).assign(stage, cap, price_reservations)

    return assign
