"""Federated market-based placement of service pipelines across administrative domains."""

from __future__ import annotations

from .dag import (
    PIPELINE_KINDS,
    ConfigError,
    PipelineTemplate,
    Slice,
    Sovereignty,
    StageEdge,
    StageSpec,
    StructuralError,
    build_template,
    classify_structure,
    kahn_order,
    topo_order,
)
from .federation import (
    BrokerState,
    FederationConfig,
    PeerView,
    SubscriptionSummary,
    dispatch_with_timeout,
    mape_epoch,
    on_price_push_result,
    recovery_probe,
    route_publication,
)
from .market import (
    ClearingPriceTable,
    MarketConfig,
    PriceSignalMsg,
    ReservationLedger,
    WorkerBid,
    clearing_prices,
    market_place,
    reserve,
    speed_scaled_bid,
    trade_decision,
    worker_cost,
)
from .polymatroid import (
    ServiceDag,
    check_submodular,
    composite_capacity,
    encapsulate,
    is_feasible,
    is_laminar,
    leaf_sets,
    max_flow,
    rank,
    rank_bruteforce,
    resource_graph,
)
from .simnet import FailureEvent, FailurePlan, RunRecord, SimConfig, WorkloadConfig, poisson_arrivals, run_sim
from .stats import (
    CellSummary,
    EfficiencyReport,
    bootstrap_ci,
    efficiency_gap,
    hodges_lehmann,
    knee_fit,
    sign_test,
    summarize,
)
from .strategies import (
    RRCursor,
    exhaustive_place,
    latency_greedy_place,
    locality_place,
    oracle_place,
    rr_place,
    sharded_oracle_place,
    spillover_place,
)
from .topology import (
    CostWeights,
    GovernancePolicy,
    LatencyModel,
    PlacementDecision,
    Topology,
    TopologySnapshot,
    WorkerSpec,
    default_topology,
    placement_cost,
)

__version__ = "0.1.0"
