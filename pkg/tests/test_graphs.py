from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from conftest import make_case
from rxgraph.graphs import PatientGraph, build_patient_graph, to_adjacency_text, validate_patient_graph


def test_build_patient_graph_chain_and_weights():
    case = make_case(
        "p", 1,
        [(0, "dx", "A"), (3, "rx", "B"), (10, "dx", "C")],
        gender="F", age=62,
    )
    graph = build_patient_graph(case)
    assert graph.nodes == ("DEMO:F", "A", "B", "C")
    assert graph.edges == ((0, 1, 62), (1, 2, 3), (2, 3, 7))
    assert graph.demo_edge_weight == 62
    validate_patient_graph(graph)


def test_build_patient_graph_same_day_order():
    # same day: dx before other before rx, then code
    case = make_case(
        "p", 0,
        [(5, "rx", "R"), (5, "dx", "D"), (5, "other", "O"), (5, "dx", "A")],
        gender="M", age=30,
    )
    graph = build_patient_graph(case)
    assert graph.nodes == ("DEMO:M", "A", "D", "O", "R")
    assert all(w == 0 for _, _, w in graph.edges[1:])  # same-day gaps


def test_build_patient_graph_empty_events_fails():
    case = make_case("p", 0, [(0, "dx", "A")])
    stripped = case.record.__class__(
        patient_id="p", demographics=case.record.demographics, events=()
    )
    empty = case.__class__(record=stripped, label=0, index_day=0)
    with pytest.raises(ValueError, match="no events"):
        build_patient_graph(empty)


def test_patient_graph_validation_rules():
    with pytest.raises(ValueError, match="at least one node"):
        PatientGraph(nodes=())
    with pytest.raises(ValueError, match="earlier to later"):
        PatientGraph(nodes=("a", "b"), edges=((1, 0, 1),))
    with pytest.raises(ValueError, match="out of range"):
        PatientGraph(nodes=("a", "b"), edges=((0, 2, 1),))
    with pytest.raises(ValueError, match="negative edge weight"):
        PatientGraph(nodes=("a", "b"), edges=((0, 1, -1),))


def test_validate_patient_graph_rejects_broken_shapes():
    with pytest.raises(ValueError, match="demographics node"):
        validate_patient_graph(PatientGraph(nodes=("A", "B"), edges=((0, 1, 1),)))
    disconnected = PatientGraph(nodes=("DEMO:F", "A", "B"), edges=((0, 1, 40),), demo_edge_weight=40)
    with pytest.raises(ValueError, match="not connected"):
        validate_patient_graph(disconnected)


def test_to_adjacency_text():
    case = make_case("p", 1, [(0, "dx", "A"), (4, "rx", "B")], gender="U", age=18)
    assert to_adjacency_text(build_patient_graph(case)) == "DEMO:U\tA\t18\nA\tB\t4\n"


@given(
    days=st.lists(st.integers(min_value=0, max_value=400), min_size=1, max_size=12),
    age=st.integers(min_value=0, max_value=110),
)
def test_patient_graph_invariants_hold_for_random_timelines(days, age):
    events = [(d, "dx", f"c{i}") for i, d in enumerate(sorted(days))]
    case = make_case("p", 0, events, age=age)
    graph = build_patient_graph(case)
    validate_patient_graph(graph)
    assert len(graph.edges) == graph.n_nodes - 1  # a chain plus the demo edge
    assert all(src < dst for src, dst, _ in graph.edges)  # acyclic by order
    assert all(w >= 0 for _, _, w in graph.edges)
