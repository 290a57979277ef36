from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_case
from rxgraph.graphs import PatientGraph, build_patient_graph
from rxgraph.kernels import (
    GramError,
    KernelKind,
    cross_gram,
    gram_matrix,
    gram_to_csv,
    pairwise_kernel,
    psd_check,
    read_gram,
    self_kernels,
    temporal_bucket_means,
    temporal_topological_kernel,
    vertex_histogram_kernel,
    wl_subtree_kernel,
    write_gram,
)


# ---------------------------------------------------------------------------
# independent oracles


def wl_oracle(g1: PatientGraph, g2: PatientGraph, h: int) -> float:
    """Recursive nested-tuple refinement: no compression dictionary at all."""

    def labels(g: PatientGraph, r: int) -> list:
        if r == 0:
            return list(g.nodes)
        prev = labels(g, r - 1)
        incoming = [[] for _ in range(g.n_nodes)]
        outgoing = [[] for _ in range(g.n_nodes)]
        for src, dst, _ in g.edges:
            incoming[dst].append(prev[src])
            outgoing[src].append(prev[dst])
        return [
            (prev[v], tuple(sorted(incoming[v])), tuple(sorted(outgoing[v])))
            for v in range(g.n_nodes)
        ]

    total = 0
    for r in range(h + 1):
        c1, c2 = Counter(labels(g1, r)), Counter(labels(g2, r))
        total += sum(count * c2[key] for key, count in c1.items())
    return float(total)


def _random_chain_graph(rng: np.random.Generator, vocab: int = 5) -> PatientGraph:
    n_events = int(rng.integers(1, 6))
    days = np.sort(rng.integers(0, 30, size=n_events))
    events = [(int(d), "dx", f"c{int(rng.integers(0, vocab))}") for d in days]
    case = make_case("p", 0, events,
                     gender=rng.choice(["F", "M", "U"]), age=int(rng.integers(0, 100)))
    return build_patient_graph(case)


# ---------------------------------------------------------------------------
# worked examples


def test_vertex_histogram_worked_example():
    g1 = PatientGraph(nodes=("A", "B", "B"))
    g2 = PatientGraph(nodes=("B", "B", "C"))
    assert vertex_histogram_kernel(g1, g2) == 4.0  # 2 shared B's on each side


def test_wl_h0_equals_vertex_histogram():
    rng = np.random.default_rng(7)
    for _ in range(20):
        g1, g2 = _random_chain_graph(rng), _random_chain_graph(rng)
        assert wl_subtree_kernel(g1, g2, 0) == vertex_histogram_kernel(g1, g2)


def test_wl_matches_bruteforce_oracle_exactly():
    rng = np.random.default_rng(13)
    for _ in range(30):
        g1, g2 = _random_chain_graph(rng), _random_chain_graph(rng)
        assert g1.n_nodes <= 6 and g2.n_nodes <= 6
        for h in (0, 1, 2, 3):
            assert wl_subtree_kernel(g1, g2, h) == wl_oracle(g1, g2, h)


def test_wl_is_invariant_under_consistent_relabeling():
    rng = np.random.default_rng(3)
    g1, g2 = _random_chain_graph(rng), _random_chain_graph(rng)
    remap = lambda g: PatientGraph(  # noqa: E731
        nodes=tuple("X" + lab for lab in g.nodes), edges=g.edges, demo_edge_weight=g.demo_edge_weight
    )
    for h in (0, 1, 2):
        assert wl_subtree_kernel(g1, g2, h) == wl_subtree_kernel(remap(g1), remap(g2), h)


def test_temporal_kernel_worked_example():
    alpha = 0.05
    g1 = PatientGraph(nodes=("A", "B"), edges=((0, 1, 4),))
    g2 = PatientGraph(nodes=("A", "B", "B"), edges=((0, 1, 2), (0, 2, 6)))
    g3 = PatientGraph(nodes=("A", "B"), edges=((0, 1, 7),))
    assert temporal_bucket_means(g2) == {("A", "B"): 4.0}
    assert temporal_topological_kernel(g1, g2, alpha) == 1.0  # equal means
    assert temporal_topological_kernel(g1, g3, alpha) == pytest.approx(
        math.exp(-alpha * 9.0), rel=1e-15, abs=0.0
    )
    disjoint = PatientGraph(nodes=("C", "D"), edges=((0, 1, 1),))
    assert temporal_topological_kernel(g1, disjoint, alpha) == 0.0


def test_temporal_kernel_sums_over_shared_buckets():
    alpha = 0.1
    g1 = PatientGraph(nodes=("A", "B", "C"), edges=((0, 1, 2), (1, 2, 10)))
    g2 = PatientGraph(nodes=("A", "B", "C"), edges=((0, 1, 5), (1, 2, 10)))
    expected = math.exp(-alpha * 9.0) + math.exp(0.0)
    assert temporal_topological_kernel(g1, g2, alpha) == pytest.approx(expected, rel=1e-15, abs=0.0)


def test_kernel_kind_validation():
    with pytest.raises(ValueError, match="unknown kernel"):
        KernelKind(name="nope")
    with pytest.raises(ValueError, match="depth"):
        KernelKind.wl_subtree(-1)
    with pytest.raises(ValueError, match="alpha"):
        KernelKind.temporal_topological(0.0)


# ---------------------------------------------------------------------------
# gram matrices


@pytest.fixture(scope="module")
def graphs():
    rng = np.random.default_rng(29)
    return [_random_chain_graph(rng) for _ in range(10)]


KINDS = [KernelKind.wl_subtree(2), KernelKind.vertex_histogram(), KernelKind.temporal_topological(0.05)]


@pytest.mark.parametrize("kind", KINDS, ids=[k.name for k in KINDS])
def test_gram_matches_pairwise_normalization_bitwise(kind, graphs):
    gram = gram_matrix(kind, graphs)
    selfs = self_kernels(kind, graphs)
    assert np.all(np.diag(gram.values) == 1.0)
    for i in range(len(graphs)):
        for j in range(len(graphs)):
            k_ij = pairwise_kernel(kind, graphs[i], graphs[j])
            expected = k_ij / np.sqrt(np.outer(selfs, selfs))[i, j]
            assert gram.values[i, j] == expected, (kind.name, i, j)


@pytest.mark.parametrize("kind", KINDS, ids=[k.name for k in KINDS])
def test_cross_gram_equals_joint_gram_block_bitwise(kind, graphs):
    train, test = graphs[:6], graphs[6:]
    gram = gram_matrix(kind, train)
    cross = cross_gram(kind, test, train, train_self_kernels=gram.self_kernels)
    joint = gram_matrix(kind, train + test)
    assert cross.shape == (len(test), len(train))
    assert np.array_equal(cross, joint.values[6:, :6])


@pytest.mark.parametrize("kind", KINDS, ids=[k.name for k in KINDS])
def test_gram_is_psd_within_tolerance(kind, graphs):
    gram = gram_matrix(kind, graphs)
    assert psd_check(gram) >= -1e-8 * gram.n


def test_unnormalized_gram_keeps_raw_values(graphs):
    kind = KernelKind.vertex_histogram()
    raw = gram_matrix(kind, graphs, normalize=False)
    assert raw.values[0, 0] == vertex_histogram_kernel(graphs[0], graphs[0])
    assert not raw.normalized


def test_gram_zero_self_kernel_is_an_error():
    lonely = PatientGraph(nodes=("A",))  # no edges: temporal self-kernel is 0
    ok = PatientGraph(nodes=("A", "B"), edges=((0, 1, 3),))
    with pytest.raises(GramError, match="graph 1 has zero self-kernel"):
        gram_matrix(KernelKind.temporal_topological(0.05), [ok, lonely])
    with pytest.raises(GramError, match="zero self-kernel"):
        cross_gram(KernelKind.temporal_topological(0.05), [lonely], [ok])


def test_cross_gram_validates_self_kernel_shape(graphs):
    kind = KernelKind.vertex_histogram()
    with pytest.raises(GramError, match="train_self_kernels has shape"):
        cross_gram(kind, graphs[:2], graphs[2:], train_self_kernels=np.ones(3))


def test_psd_check_worked_example():
    assert psd_check(np.array([[1.0, 2.0], [2.0, 1.0]])) == -1.0
    with pytest.raises(ValueError, match="asymmetric"):
        psd_check(np.array([[1.0, 0.5], [0.1, 1.0]]))


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_gram_properties_on_random_cohorts(data):
    seed = data.draw(st.integers(min_value=0, max_value=2**31))
    n = data.draw(st.integers(min_value=2, max_value=6))
    rng = np.random.default_rng(seed)
    graphs = [_random_chain_graph(rng) for _ in range(n)]
    for kind in KINDS:
        gram = gram_matrix(kind, graphs)
        assert np.array_equal(gram.values, gram.values.T)
        assert np.all(np.diag(gram.values) == 1.0)
        assert np.all(gram.values >= 0.0) and np.all(gram.values <= 1.0 + 1e-12)
        assert psd_check(gram) >= -1e-8 * n


# ---------------------------------------------------------------------------
# the KGRM container


def test_kgrm_round_trip(tmp_path, graphs):
    for kind in KINDS:
        gram = gram_matrix(kind, graphs)
        path = tmp_path / f"{kind.name}.kgrm"
        write_gram(path, gram)
        loaded = read_gram(path)
        assert np.array_equal(loaded.values, gram.values)
        assert loaded.kernel == kind
        assert loaded.normalized is True
        assert loaded.self_kernels is None  # not persisted


def test_kgrm_rejects_corruption(tmp_path, graphs):
    path = tmp_path / "g.kgrm"
    write_gram(path, gram_matrix(KINDS[0], graphs))
    blob = path.read_bytes()
    (tmp_path / "short.kgrm").write_bytes(blob[:8])
    with pytest.raises(GramError, match="truncated"):
        read_gram(tmp_path / "short.kgrm")
    (tmp_path / "magic.kgrm").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(GramError, match="bad magic"):
        read_gram(tmp_path / "magic.kgrm")
    (tmp_path / "trunc.kgrm").write_bytes(blob[:-16])
    with pytest.raises(GramError, match="expected .* bytes"):
        read_gram(tmp_path / "trunc.kgrm")


def test_gram_to_csv_round_trips_through_repr(graphs):
    gram = gram_matrix(KINDS[2], graphs[:3])
    rows = [
        [float(cell) for cell in line.split(",")]
        for line in gram_to_csv(gram).strip().splitlines()
    ]
    assert np.array_equal(np.array(rows), gram.values)
