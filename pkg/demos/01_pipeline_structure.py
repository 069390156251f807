"""Walk through the three pipeline templates and the capacity model behind them.

Run:  python3 demos/01_pipeline_structure.py
"""

from __future__ import annotations

from fedplace import build_template, classify_structure, encapsulate, rank, resource_graph
from fedplace.dag import PIPELINE_KINDS
from fedplace.polymatroid import ServiceDag, check_submodular, connected_refinement, domain_partition, leaf_sets

# Each template is an 8-stage DAG whose stages are homed in one of four
# administrative domains.  The shape decides which placement tricks apply:
# trees admit an exact dynamic program, series-parallel graphs decompose,
# and anything else needs encapsulation first.
for kind in PIPELINE_KINDS:
    t = build_template(kind)
    homes = sorted({s.home_domain for s in t.stages})
    print(f"{kind:<14} {classify_structure(t).cls:<16} stages={len(t.stages)} edges={len(t.edges)} homes={homes}")

# ran-entangled is the awkward one.  Grouping its stages by home domain and
# collapsing each group gives a quotient graph that is a plain tree, so the
# federation-level problem stays easy even though the stage graph is not.
ent = build_template("ran-entangled")
view = encapsulate(resource_graph(ent), domain_partition(ent))
print("\nran-entangled quotient:", view.quotient_nodes, view.quotient_edges, "->", view.classify().cls)
print("composite capacities:", view.composite_capacity)

# The capacity a set of leaf stages can draw on is a rank function.  On a
# laminar family (nested or disjoint leaf sets) it is submodular, which is
# what lets price-based allocation work greedily.
dag = ServiceDag(
    ("root", "edge", "cloud", "du", "ric"),
    (("root", "edge"), ("root", "cloud"), ("edge", "du"), ("cloud", "ric")),
    {"root": 10.0, "edge": 6.0, "cloud": 8.0, "du": 100.0, "ric": 100.0},
)
print("\nleaf sets:", {k: sorted(v) for k, v in leaf_sets(dag).sets.items()})
for S in ([], ["du"], ["ric"], ["du", "ric"]):
    print(f"  rank({S}) = {rank(dag, S)}")
rep = check_submodular(dag)
print(f"laminar={rep.laminar} submodular={rep.submodular} subsets checked={rep.checked}")

# Every template, once refined so each domain class is connected, reduces
# to a tree or series-parallel quotient.
for kind in PIPELINE_KINDS:
    d = resource_graph(build_template(kind))
    q = encapsulate(d, connected_refinement(d, domain_partition(build_template(kind))))
    print(f"{kind:<14} quotient nodes={len(q.quotient_nodes)} class={q.classify().cls}")
