"""How one broker prices work and decides whether to trade it to a peer.

Run:  python3 demos/02_market_clearing.py
"""

from __future__ import annotations

from fedplace import (
    MarketConfig,
    PriceSignalMsg,
    ReservationLedger,
    build_template,
    clearing_prices,
    default_topology,
    market_place,
    trade_decision,
    worker_cost,
)
from fedplace.market import DomainMarket, make_bids, snapshot_remote_assign
from fedplace.topology import TopologySnapshot

# A worker's asking price grows like an M/M/1 queue's delay: bid / (1 - rho).
# The cap at rho = 0.99 keeps a saturated worker finite at 100x its bid.
print("congestion pricing for a worker with bid 10 and capacity 4")
for load in (0, 1, 2, 3, 3.9, 4, 6):
    print(f"  load={load:<4} cost={worker_cost(10.0, load, 4.0):8.2f}")

# The clearing price of a stage type is the d-th cheapest bid, where d is
# how many stages of that type arrived this round.
topo = default_topology(workers_per_domain=4)
d2 = topo.workers_in("d2")
loads = {w.worker_id: float(i) for i, w in enumerate(d2)}
bids = make_bids(d2, loads, "RIC:predict")
for d in (1, 2, 3):
    tab = clearing_prices({"RIC:predict": bids}, {"RIC:predict": d})
    print(f"demand {d}: price {tab.prices['RIC:predict']:.2f} set by worker {tab.priced_worker['RIC:predict']}")

# Trading: a stage leaves home only if a peer's price plus the transfer cost
# is strictly cheaper.  With a WAN cost of 10, a busy local market loses to
# an idle peer, but an idle local market never does.
peers = [PriceSignalMsg("d3", {"t": 10.0}, 0.0), PriceSignalMsg("d4", {"t": 12.0}, 0.0)]
for local_price in (10.0, 19.0, 25.0):
    print(f"local {local_price:>5}: {trade_decision('t', local_price, peers, wan_cost=10.0)}")

# A whole pipeline: d1 is nearly full, so stages spill to whichever peers
# advertise cheaper prices.  The remote brokers pick their own workers,
# and each reservation raises that worker's price for the next stage.
pipe = build_template("cqi-chain")
loads = {w.worker_id: 3.5 for w in topo.workers_in("d1")}
snap = TopologySnapshot(topo, loads)
local = DomainMarket("d1", topo.workers_in("d1"), loads, ReservationLedger())
signals = []
for dom in ("d2", "d3", "d4"):
    peer = DomainMarket(dom, topo.workers_in(dom), loads, ReservationLedger())
    signals.append(PriceSignalMsg(dom, peer.prices(pipe.stages, {s.stage_type: 1 for s in pipe.stages}).prices, 0.0))
dec = market_place(pipe, "d1", local, signals, MarketConfig(), remote_assign=snapshot_remote_assign(snap),
                   topology=topo)
print(f"\naccepted={dec.accepted} cost={dec.total_cost:.1f} domains crossed={dec.domains_crossed}")
for sid, wid in sorted(dec.assignment.items()):
    print(f"  stage {sid} {pipe.stage(sid).stage_type:<18} -> worker {wid:>2} in {topo.worker_by_id[wid].domain}")
