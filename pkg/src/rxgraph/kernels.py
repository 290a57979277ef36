"""Graph kernels over patient graphs and their (cross-)Gram matrices.

Three kernels, all with explicit finite feature maps so every Gram matrix is
positive semi-definite up to round-off:

* vertex histogram — dot product of node-label count vectors.
* WL subtree — sum over refinement rounds of label-histogram dot products,
  with collision-free relabeling through an injective per-round dictionary;
  a node's new label encodes (old label, sorted in-neighbor labels, sorted
  out-neighbor labels).
* temporal topological — directed edges are bucketed by (source label,
  destination label); per comparable bucket the kernel contributes
  ``exp(-alpha * (mean_gap_1 - mean_gap_2)^2)``.

Gram matrices are stored in the small binary ``KGRM`` container (see
``write_gram``).
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graphs import PatientGraph

WL_MAX_DEPTH = 10

KGRM_MAGIC = b"KGRM"
KGRM_VERSION = 1

_KIND_TAGS = {"wl_subtree": 1, "vertex_histogram": 2, "temporal_topological": 3}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class GramError(ValueError):
    """A Gram matrix could not be built or fails its invariants."""


@dataclass(frozen=True)
class KernelKind:
    """A kernel selector plus its parameters (h for WL, alpha for temporal)."""

    name: str
    h: int = 0
    alpha: float = 0.0

    def __post_init__(self):
        if self.name not in _KIND_TAGS:
            raise ValueError(f"unknown kernel: {self.name!r}")
        if self.name == "wl_subtree":
            if not 0 <= self.h <= WL_MAX_DEPTH:
                raise ValueError(f"wl_subtree depth must be in [0, {WL_MAX_DEPTH}], got {self.h}")
        if self.name == "temporal_topological" and self.alpha <= 0:
            raise ValueError(f"temporal kernel needs alpha > 0, got {self.alpha}")

    @classmethod
    def wl_subtree(cls, h: int) -> "KernelKind":
        return cls(name="wl_subtree", h=h)

    @classmethod
    def vertex_histogram(cls) -> "KernelKind":
        return cls(name="vertex_histogram")

    @classmethod
    def temporal_topological(cls, alpha: float) -> "KernelKind":
        return cls(name="temporal_topological", alpha=alpha)


@dataclass(frozen=True)
class GramMatrix:
    """A (normalized) kernel matrix over a fixed graph list.

    ``self_kernels`` keeps the raw diagonal k(g, g) needed to normalize
    cross-Gram rows later; it is not persisted in the binary container.
    """

    values: np.ndarray
    kernel: KernelKind
    normalized: bool
    self_kernels: np.ndarray | None = None

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise GramError(f"gram matrix must be square, got shape {v.shape}")

    @property
    def n(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# feature maps


def node_label_counts(graph: PatientGraph) -> Counter:
    return Counter(graph.nodes)


def _neighbor_labels(graph: PatientGraph):
    """Per node: (in-neighbor indices, out-neighbor indices)."""
    n = graph.n_nodes
    incoming: list[list[int]] = [[] for _ in range(n)]
    outgoing: list[list[int]] = [[] for _ in range(n)]
    for src, dst, _ in graph.edges:
        outgoing[src].append(dst)
        incoming[dst].append(src)
    return incoming, outgoing


def _wl_histograms(graphs: Sequence[PatientGraph], h: int) -> list[list[Counter]]:
    """Refinement-round label histograms for every graph, rounds 0..h.

    One injective compression dictionary per round is shared across all
    graphs in the call, so histogram keys are directly comparable.  Because
    the relabeling is collision-free, dot products are unchanged by which
    graphs share a call.
    """
    labels: list[list] = [list(g.nodes) for g in graphs]
    neighbors = [_neighbor_labels(g) for g in graphs]
    hists: list[list[Counter]] = [[Counter(lab)] for lab in labels]
    for _ in range(h):
        table: dict[tuple, int] = {}
        new_labels: list[list] = []
        for gi, g in enumerate(graphs):
            incoming, outgoing = neighbors[gi]
            lab = labels[gi]
            new = []
            for v in range(g.n_nodes):
                signature = (
                    lab[v],
                    tuple(sorted(lab[u] for u in incoming[v])),
                    tuple(sorted(lab[u] for u in outgoing[v])),
                )
                new.append(table.setdefault(signature, len(table)))
            new_labels.append(new)
        labels = new_labels
        for gi in range(len(graphs)):
            hists[gi].append(Counter(labels[gi]))
    return hists


def temporal_bucket_means(graph: PatientGraph) -> dict[tuple[str, str], float]:
    """Mean edge weight per (source label, destination label) bucket."""
    totals: dict[tuple[str, str], list[int]] = {}
    for src, dst, weight in graph.edges:
        key = (graph.nodes[src], graph.nodes[dst])
        bucket = totals.setdefault(key, [0, 0])
        bucket[0] += weight
        bucket[1] += 1
    return {key: total / count for key, (total, count) in totals.items()}


def _counter_dot(a: Counter, b: Counter) -> float:
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    # integer counts: the sum is exact, so iteration order cannot matter
    return float(sum(small[key] * big[key] for key in small if key in big))


# ---------------------------------------------------------------------------
# pairwise kernels


def vertex_histogram_kernel(g1: PatientGraph, g2: PatientGraph) -> float:
    """Dot product of node-label counts."""
    return _counter_dot(node_label_counts(g1), node_label_counts(g2))


def wl_subtree_kernel(g1: PatientGraph, g2: PatientGraph, h: int) -> float:
    """WL subtree kernel: sum of histogram dot products over rounds 0..h."""
    if not 0 <= h <= WL_MAX_DEPTH:
        raise ValueError(f"wl depth must be in [0, {WL_MAX_DEPTH}], got {h}")
    h1, h2 = _wl_histograms([g1, g2], h)
    return float(sum(_counter_dot(a, b) for a, b in zip(h1, h2)))


def temporal_topological_kernel(g1: PatientGraph, g2: PatientGraph, alpha: float) -> float:
    """Gaussian agreement of mean day-gaps over shared edge-label buckets.

    Evaluates through the same bucket-block code as the Gram assembly, so a
    Gram entry and the pairwise value are the same float bit for bit.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return float(_temporal_gram([g1, g2], alpha)[0, 1])


def pairwise_kernel(kernel: KernelKind, g1: PatientGraph, g2: PatientGraph) -> float:
    if kernel.name == "wl_subtree":
        return wl_subtree_kernel(g1, g2, kernel.h)
    if kernel.name == "vertex_histogram":
        return vertex_histogram_kernel(g1, g2)
    return temporal_topological_kernel(g1, g2, kernel.alpha)


def self_kernels(kernel: KernelKind, graphs: Sequence[PatientGraph]) -> np.ndarray:
    """Raw k(g, g) for every graph (cheap: no cross terms needed)."""
    if kernel.name == "temporal_topological":
        # every shared bucket contributes exp(0) = 1
        return np.array([float(len(temporal_bucket_means(g))) for g in graphs])
    if kernel.name == "vertex_histogram":
        hists = [[node_label_counts(g)] for g in graphs]
    else:
        hists = _wl_histograms(graphs, kernel.h)
    return np.array([sum(_counter_dot(hist, hist) for hist in per_graph) for per_graph in hists])


# ---------------------------------------------------------------------------
# gram assembly


def _histogram_gram(per_graph_hists: list[list[Counter]], n_left: int | None = None) -> np.ndarray:
    """Sum over rounds of count-matrix products.

    With ``n_left`` set, returns the (n_left, rest) cross block instead of
    the full square matrix.
    """
    n = len(per_graph_hists)
    rounds = len(per_graph_hists[0])
    if n_left is None:
        out = np.zeros((n, n))
    else:
        out = np.zeros((n_left, n - n_left))
    for r in range(rounds):
        vocab: dict = {}
        for hists in per_graph_hists:
            for key in hists[r]:
                vocab.setdefault(key, len(vocab))
        counts = np.zeros((n, len(vocab)))
        for i, hists in enumerate(per_graph_hists):
            for key, c in hists[r].items():
                counts[i, vocab[key]] = c
        if n_left is None:
            out += counts @ counts.T
        else:
            out += counts[:n_left] @ counts[n_left:].T
    return out


def _temporal_gram(graphs: Sequence[PatientGraph], alpha: float, n_left: int | None = None) -> np.ndarray:
    """Bucket-wise accumulation, in sorted bucket order so that every entry
    sums its terms exactly like the pairwise function does."""
    n = len(graphs)
    membership: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for i, g in enumerate(graphs):
        for key, mean in temporal_bucket_means(g).items():
            membership.setdefault(key, []).append((i, mean))
    if n_left is None:
        out = np.zeros((n, n))
    else:
        out = np.zeros((n_left, n - n_left))
    for key in sorted(membership):
        idx = np.array([i for i, _ in membership[key]])
        means = np.array([m for _, m in membership[key]])
        if n_left is None:
            block = np.exp(-alpha * (means[:, None] - means[None, :]) ** 2)
            out[np.ix_(idx, idx)] += block
        else:
            left = idx < n_left
            if not left.any() or left.all():
                continue
            li, lm = idx[left], means[left]
            ri, rm = idx[~left] - n_left, means[~left]
            block = np.exp(-alpha * (lm[:, None] - rm[None, :]) ** 2)
            out[np.ix_(li, ri)] += block
    return out


def _raw_gram(kernel: KernelKind, graphs: Sequence[PatientGraph]) -> np.ndarray:
    if kernel.name == "temporal_topological":
        return _temporal_gram(graphs, kernel.alpha)
    if kernel.name == "vertex_histogram":
        hists = [[node_label_counts(g)] for g in graphs]
    else:
        hists = _wl_histograms(graphs, kernel.h)
    return _histogram_gram(hists)


def gram_matrix(
    kernel: KernelKind, graphs: Sequence[PatientGraph], normalize: bool = True
) -> GramMatrix:
    """Kernel matrix over ``graphs``; normalized entries are
    ``k_ij / sqrt(k_ii * k_jj)``.

    Raises :class:`GramError` if a graph's self-kernel is zero (normalization
    undefined), naming the offending graph index.
    """
    graphs = list(graphs)
    if not graphs:
        raise GramError("cannot build a gram matrix over zero graphs")
    values = _raw_gram(kernel, graphs)
    diag = values.diagonal().copy()
    if normalize:
        zero = np.flatnonzero(diag <= 0.0)
        if zero.size:
            raise GramError(f"graph {zero[0]} has zero self-kernel; cannot normalize")
        values = values / np.sqrt(np.outer(diag, diag))
    return GramMatrix(values=values, kernel=kernel, normalized=normalize, self_kernels=diag)


def cross_gram(
    kernel: KernelKind,
    test_graphs: Sequence[PatientGraph],
    train_graphs: Sequence[PatientGraph],
    train_self_kernels: np.ndarray | Sequence[float] | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """(len(test), len(train)) kernel block against a fixed training list.

    Normalization divides entry (r, c) by ``sqrt(k(t_r, t_r) * k_cc)`` where
    ``k_cc`` comes from ``train_self_kernels`` (computed here if omitted).
    """
    test_graphs = list(test_graphs)
    train_graphs = list(train_graphs)
    if not train_graphs:
        raise GramError("cross_gram needs at least one training graph")
    if not test_graphs:
        return np.zeros((0, len(train_graphs)))
    both = test_graphs + train_graphs
    if kernel.name == "temporal_topological":
        values = _temporal_gram(both, kernel.alpha, n_left=len(test_graphs))
    elif kernel.name == "vertex_histogram":
        hists = [[node_label_counts(g)] for g in both]
        values = _histogram_gram(hists, n_left=len(test_graphs))
    else:
        hists = _wl_histograms(both, kernel.h)
        values = _histogram_gram(hists, n_left=len(test_graphs))
    if normalize:
        if train_self_kernels is None:
            train_self_kernels = self_kernels(kernel, train_graphs)
        train_diag = np.asarray(train_self_kernels, dtype=float)
        if train_diag.shape != (len(train_graphs),):
            raise GramError(
                f"train_self_kernels has shape {train_diag.shape}, expected ({len(train_graphs)},)"
            )
        test_diag = self_kernels(kernel, test_graphs)
        bad_test = np.flatnonzero(test_diag <= 0.0)
        if bad_test.size:
            raise GramError(f"test graph {bad_test[0]} has zero self-kernel; cannot normalize")
        bad_train = np.flatnonzero(train_diag <= 0.0)
        if bad_train.size:
            raise GramError(f"train graph {bad_train[0]} has zero self-kernel; cannot normalize")
        values = values / np.sqrt(np.outer(test_diag, train_diag))
    return values


def psd_check(gram: GramMatrix | np.ndarray, symmetry_tol: float = 1e-9) -> float:
    """Smallest eigenvalue of a symmetric kernel matrix.

    Raises if the matrix is asymmetric beyond ``symmetry_tol``.
    """
    values = gram.values if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {values.shape}")
    asym = float(np.max(np.abs(values - values.T), initial=0.0))
    if asym > symmetry_tol:
        raise ValueError(f"matrix is asymmetric: max |K - K^T| = {asym:.3e} > {symmetry_tol:.0e}")
    return float(np.linalg.eigvalsh(values)[0])


# ---------------------------------------------------------------------------
# KGRM container

_HEADER = struct.Struct("<4sIIBdB")


def write_gram(path: str | Path, gram: GramMatrix) -> None:
    """Write the KGRM container: magic, version, N, kernel tag + parameter,
    normalized flag, then N*N little-endian float64 in row-major order."""
    kernel = gram.kernel
    param = float(kernel.h) if kernel.name == "wl_subtree" else float(kernel.alpha)
    header = _HEADER.pack(
        KGRM_MAGIC,
        KGRM_VERSION,
        gram.n,
        _KIND_TAGS[kernel.name],
        param,
        1 if gram.normalized else 0,
    )
    data = np.ascontiguousarray(gram.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + data)


def read_gram(path: str | Path) -> GramMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise GramError(f"{path}: truncated KGRM file")
    magic, version, n, tag, param, normalized = _HEADER.unpack_from(blob)
    if magic != KGRM_MAGIC:
        raise GramError(f"{path}: bad magic {magic!r}, expected {KGRM_MAGIC!r}")
    if version != KGRM_VERSION:
        raise GramError(f"{path}: unsupported KGRM version {version}")
    if tag not in _TAG_KINDS:
        raise GramError(f"{path}: unknown kernel tag {tag}")
    expected = _HEADER.size + n * n * 8
    if len(blob) != expected:
        raise GramError(f"{path}: expected {expected} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(n, n).copy()
    name = _TAG_KINDS[tag]
    if name == "wl_subtree":
        kernel = KernelKind.wl_subtree(int(param))
    elif name == "vertex_histogram":
        kernel = KernelKind.vertex_histogram()
    else:
        kernel = KernelKind.temporal_topological(param)
    return GramMatrix(values=values, kernel=kernel, normalized=bool(normalized))


def gram_to_csv(gram: GramMatrix | np.ndarray) -> str:
    """Debug CSV dump of the matrix entries."""
    values = gram.values if isinstance(gram, GramMatrix) else np.asarray(gram)
    return "\n".join(",".join(repr(float(x)) for x in row) for row in values) + "\n"
