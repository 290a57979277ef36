"""Patient graphs: one weighted DAG per labeled case.

The graph is the patient's event chain in time order with one extra
demographics node in front.  Edge weights are day gaps between consecutive
events; the demographics edge carries the patient's age in years.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .records import Gender, LabeledCase, event_sort_key

_DEMO_LABEL = {Gender.female: "DEMO:F", Gender.male: "DEMO:M", Gender.unknown: "DEMO:U"}


@dataclass(frozen=True)
class PatientGraph:
    """A node-labeled, integer-weighted directed acyclic graph.

    ``nodes`` holds the label of each node; ``edges`` holds
    ``(src_index, dst_index, weight)`` triples with ``src_index < dst_index``.
    ``demo_edge_weight`` echoes the age weight on the demographics edge
    (0 for graphs built without one).
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)
    demo_edge_weight: int = 0

    def __post_init__(self):
        n = len(self.nodes)
        if n == 0:
            raise ValueError("graph must have at least one node")
        for src, dst, weight in self.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise ValueError(f"edge ({src}, {dst}) out of range for {n} nodes")
            if src >= dst:
                raise ValueError(f"edge ({src}, {dst}) must point from earlier to later node")
            if weight < 0:
                raise ValueError(f"negative edge weight: {weight}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def build_patient_graph(case: LabeledCase) -> PatientGraph:
    """Build the event-chain graph of a labeled case.

    Node 0 is the demographics node ``DEMO:F|M|U``; it points at the first
    medical event with the age (years) as weight.  Events follow in
    ``(day, kind, code)`` order, chained with day-gap weights; same-day
    neighbors get weight 0.
    """
    events = sorted(case.record.events, key=event_sort_key)
    if not events:
        raise ValueError(f"case {case.record.patient_id!r} has no events to build a graph from")
    demo = case.record.demographics
    nodes = [_DEMO_LABEL[demo.gender]] + [e.code for e in events]
    edges = [(0, 1, demo.age_years)]
    for i in range(len(events) - 1):
        gap = events[i + 1].day - events[i].day
        edges.append((i + 1, i + 2, gap))
    return PatientGraph(
        nodes=tuple(nodes), edges=tuple(edges), demo_edge_weight=demo.age_years
    )


def to_adjacency_text(graph: PatientGraph) -> str:
    """Debug export: one ``src_label<TAB>dst_label<TAB>weight`` line per edge."""
    lines = [f"{graph.nodes[src]}\t{graph.nodes[dst]}\t{weight}" for src, dst, weight in graph.edges]
    return "\n".join(lines) + ("\n" if lines else "")


def validate_patient_graph(graph: PatientGraph) -> None:
    """Assert the structural invariants of a built patient graph.

    Connected, acyclic (guaranteed by the src < dst edge rule), one
    demographics node with out-degree 1 pointing at the first event.
    """
    if graph.n_nodes < 2:
        raise ValueError("patient graph needs a demographics node and at least one event")
    if not graph.nodes[0].startswith("DEMO:"):
        raise ValueError("node 0 must be the demographics node")
    demo_out = [e for e in graph.edges if e[0] == 0]
    if len(demo_out) != 1 or demo_out[0][1] != 1:
        raise ValueError("demographics node must have exactly one edge, to the first event")
    if demo_out[0][2] != graph.demo_edge_weight:
        raise ValueError("demo_edge_weight does not match the demographics edge")
    # connectivity: the chain must touch every node
    seen = {0}
    for src, dst, _ in sorted(graph.edges):
        if src in seen:
            seen.add(dst)
    if len(seen) != graph.n_nodes:
        raise ValueError("patient graph is not connected")
