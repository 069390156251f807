"""Brokers losing each other: a broker kill and an edge/cloud partition.

Run:  python3 demos/04_federation_under_failure.py
"""

from __future__ import annotations

import collections

from fedplace import FailureEvent, FailurePlan
from fedplace.federation import PeerView, on_price_push_result
from fedplace.market import PriceSignalMsg
from fedplace.simnet import quick_config, run_sim

# A broker learns about peers only from their price pushes.  Three missed
# pushes in a row and the peer is evicted together with everything we knew
# about it; a later recovery probe brings it back.
view = PeerView("d3")
view.record(PriceSignalMsg("d3", {"RIC:predict": 12.0}, 0.0))
for epoch, ok in enumerate([False, False, True, False, False, False], start=1):
    on_price_push_result(view, ok)
    print(f"epoch {epoch}: push {'ok  ' if ok else 'lost'} misses={view.consecutive_misses} healthy={view.healthy}")

# In simulation the same rules play out on the clock.  d2's broker dies at
# t=40 s; arrivals it would have served re-register with the nearest live
# broker, and peers stop offering it work once the failure is noticed.
kill = FailurePlan((FailureEvent(40.0, "broker-kill", "d2"),))
rec = run_sim(quick_config("market", lam=20.0, kind="ran-entangled", duration=90.0, warmup=20.0,
                           failures=kill, record_trace=True))
kinds = collections.Counter(row[3] for row in rec.messages.rows)
print(f"\nbroker-kill: CR={rec.completion_rate:.3f} dispatch timeouts={rec.counts['dispatch_timeouts']}")
print("message kinds:", dict(kinds))

# A partition cuts every message between the edge site (d1, d2) and the
# cloud site (d3, d4).  Placement falls back to what each side can reach,
# and nothing is dispatched across the cut while it lasts.
cut = FailurePlan((FailureEvent(30.0, "partition-start"), FailureEvent(70.0, "partition-end")))
for strategy in ("market", "oracle-sharded", "oracle"):
    rec = run_sim(quick_config(strategy, lam=20.0, kind="cqi-chain", duration=90.0, warmup=20.0, failures=cut))
    reasons = collections.Counter(r.reject_reason for r in rec.rows if not r.completed)
    print(f"{strategy:<15} CR={rec.completion_rate:.3f} cross-site dispatches in partition="
          f"{rec.counts['cross_site_in_partition']} losses={dict(reasons)}")
print("(the full-visibility oracle ignores reachability, so it keeps placing across the cut)")
