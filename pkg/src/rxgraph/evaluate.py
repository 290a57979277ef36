"""Evaluation harness: stratified folds, metrics, paired t-tests, baselines,
the full experiment loop, and the embedding export.

Per fold, Gram matrices are rebuilt from the training graphs only and test
cases enter solely through cross-Gram rows against those training graphs, so
kernel normalization never sees the test set.  Fold scores feed paired
t-tests whose p-values come from the Student-t CDF, computed through the
regularized incomplete beta function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import LinearSVMSubgradient, LogisticRegressionGD, bag_of_codes, build_vocabulary
from .graphs import build_patient_graph
from .kernels import KernelKind, cross_gram, gram_matrix
from .net import EmbedNet, NetConfig, forward_embed, predict, train
from .records import LabeledCase
from .synth import REBALANCE_MODES, rebalance

SIGNIFICANCE_LEVEL = 0.01
METRIC_COLUMNS = ("accuracy", "macro_f1", "auc")
NET_MODELS = ("euclidean", "cosine")
BASELINE_MODELS = ("svm_baseline", "lr_baseline")


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    """Fold index per case; stratified, seeded, round-robin within class."""

    k: int
    seed: int
    assignments: np.ndarray

    def fold(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        """(train_indices, test_indices) of fold ``f``."""
        test = np.flatnonzero(self.assignments == f)
        training = np.flatnonzero(self.assignments != f)
        return training, test


def stratified_kfold(labels, k: int, seed: int) -> FoldPlan:
    y = np.asarray(labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    assignments = np.empty(len(y), dtype=int)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    for cls in sorted(np.unique(y)):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise ValueError(f"class {cls} has {len(idx)} case(s), fewer than k={k}")
        rng.shuffle(idx)
        assignments[idx] = np.arange(len(idx)) % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    auc: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "auc": self.auc}


def compute_metrics(labels, probs, preds) -> Metrics:
    """Accuracy, macro-F1 (a class with zero precision+recall scores 0), and
    the Mann-Whitney AUC with ties counted 1/2."""
    y = np.asarray(labels).astype(int)
    p = np.asarray(probs, dtype=float)
    yhat = np.asarray(preds).astype(int)
    if not (y.shape == p.shape == yhat.shape) or y.ndim != 1:
        raise ValueError("labels, probs and preds must be equal-length vectors")
    if len(y) == 0:
        raise ValueError("cannot score an empty fold")
    if len(np.unique(y)) < 2:
        raise ValueError("AUC is undefined: fold labels contain a single class")

    accuracy = float(np.sum(yhat == y)) / len(y)

    f1s = []
    for cls in (0, 1):
        tp = int(np.sum((yhat == cls) & (y == cls)))
        fp = int(np.sum((yhat == cls) & (y != cls)))
        fn = int(np.sum((yhat != cls) & (y == cls)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall))
    macro_f1 = (f1s[0] + f1s[1]) / 2.0

    order = np.argsort(p, kind="mergesort")
    ranks = np.empty(len(p))
    i = 0
    while i < len(p):
        j = i
        while j < len(p) and p[order[j]] == p[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j - 1) / 2.0 + 1.0  # 1-based midrank
        i = j
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    auc = (float(ranks[y == 1].sum()) - n1 * (n1 + 1) / 2.0) / (n1 * n0)
    return Metrics(accuracy=accuracy, macro_f1=macro_f1, auc=float(auc))


# ---------------------------------------------------------------------------
# paired t-test via the regularized incomplete beta function


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    max_iterations = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) by the continued-fraction expansion (modified Lentz)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if not math.isfinite(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(scores_a, scores_b) -> TTestResult:
    """Two-sided paired t-test across fold scores.

    Zero-variance differences are degenerate: p = 1 when the mean difference
    is zero too, else p = 0.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired scores must be two equal-length vectors")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two folds")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, significant=False, degenerate=True)
        t = math.inf if mean > 0 else -math.inf
        return TTestResult(t=t, p=0.0, significant=True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = student_t_two_sided_p(t, n - 1)
    return TTestResult(t=t, p=p, significant=p < SIGNIFICANCE_LEVEL)


# ---------------------------------------------------------------------------
# baselines over folds


def run_baselines(cases: Sequence[LabeledCase], plan: FoldPlan, seed: int):
    """Per-fold test predictions {model: [(probs, preds), ...]} with the
    bag-of-codes vocabulary rebuilt from each training fold."""
    y = np.array([c.label for c in cases])
    out: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {"svm_baseline": [], "lr_baseline": []}
    for f in range(plan.k):
        training, test = plan.fold(f)
        train_cases = [cases[i] for i in training]
        test_cases = [cases[i] for i in test]
        vocabulary = build_vocabulary(train_cases)
        x_train = bag_of_codes(train_cases, vocabulary)
        x_test = bag_of_codes(test_cases, vocabulary)
        svm = LinearSVMSubgradient(seed=_derive_seed(seed, 0, f)).fit(x_train, y[training])
        lr = LogisticRegressionGD(seed=_derive_seed(seed, 1, f)).fit(x_train, y[training])
        out["svm_baseline"].append((svm.predict_proba(x_test), svm.predict(x_test)))
        out["lr_baseline"].append((lr.predict_proba(x_test), lr.predict(x_test)))
    return out


# ---------------------------------------------------------------------------
# embedding export


def pca_2d(embeddings: np.ndarray) -> np.ndarray:
    """Deterministic 2-D principal-component projection.

    Component signs are fixed by making each component's largest-magnitude
    loading positive; rank-deficient directions project to zero.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("the 2-D projection needs at least 3 embedding rows")
    centered = x - x.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    coords = np.zeros((x.shape[0], 2))
    for c in range(min(2, vt.shape[0])):
        if singular[c] <= 1e-12 * max(x.shape):
            continue
        component = vt[c]
        if component[np.argmax(np.abs(component))] < 0:
            component = -component
        coords[:, c] = centered @ component
    return coords


def export_embeddings(net: EmbedNet, rows, labels, ids, splits) -> str:
    """CSV of embeddings plus their 2-D projection.

    Header: ``id,split,label,e_0..e_{d-1},x2d,y2d``.
    """
    emb = forward_embed(net, rows)
    if emb.ndim == 1:
        emb = emb[None, :]
    y = list(labels)
    ids = list(ids)
    splits = list(splits)
    if not (len(ids) == len(y) == len(splits) == emb.shape[0]):
        raise ValueError("ids, splits, labels and rows must align")
    coords = pca_2d(emb)
    d = emb.shape[1]
    header = "id,split,label," + ",".join(f"e_{i}" for i in range(d)) + ",x2d,y2d"
    lines = [header]
    for i in range(emb.shape[0]):
        values = ",".join(repr(float(v)) for v in emb[i])
        planar = f"{float(coords[i, 0])!r},{float(coords[i, 1])!r}"
        lines.append(f"{ids[i]},{splits[i]},{y[i]},{values},{planar}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the experiment loop


@dataclass
class ExperimentConfig:
    """Everything a full evaluation run depends on."""

    k: int = 5
    seed: int = 0
    metrics: tuple[str, ...] = ("euclidean", "cosine")
    balance_modes: tuple[str, ...] = ("balanced", "imbalanced_70_30")
    include_baselines: bool = True
    wl_h: int = 2
    alpha: float = 0.05
    embed_dim: int = 64
    fusion_dim: int = 16
    margin_lambda: float = 1.0
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 200
    early_stop_patience: int = 20

    def __post_init__(self):
        for metric in self.metrics:
            if metric not in NET_MODELS:
                raise ValueError(f"unknown metric {metric!r}")
        for mode in self.balance_modes:
            if mode not in REBALANCE_MODES:
                raise ValueError(f"unknown balance mode {mode!r}")
        if not self.metrics or not self.balance_modes:
            raise ValueError("at least one metric and one balance mode are required")

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "metrics": list(self.metrics),
            "balance_modes": list(self.balance_modes),
            "include_baselines": self.include_baselines,
            "wl_h": self.wl_h,
            "alpha": self.alpha,
            "embed_dim": self.embed_dim,
            "fusion_dim": self.fusion_dim,
            "margin_lambda": self.margin_lambda,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
        }

    def net_config(self, metric: str, seed: int) -> NetConfig:
        return NetConfig(
            embed_dim_per_kernel=self.embed_dim,
            fusion_dim=self.fusion_dim,
            classifier_dim=self.fusion_dim,
            margin_lambda=self.margin_lambda,
            metric=metric,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            seed=seed,
        )


@dataclass
class EvalReport:
    """Per-fold and aggregate scores, pairwise t-tests, significance markers."""

    meta: dict
    results: dict = field(default_factory=dict)
    t_tests: dict = field(default_factory=dict)
    markers: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "meta": self.meta,
                "results": self.results,
                "t_tests": self.t_tests,
                "markers": self.markers,
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = []
        for mode, models in self.results.items():
            lines.append(f"=== {mode} ===")
            lines.append(
                f"{'model':<14}" + "".join(f"{column:>20}" for column in METRIC_COLUMNS)
            )
            for model, payload in models.items():
                cells = []
                for column in METRIC_COLUMNS:
                    agg = payload["aggregate"][column]
                    star = "*" if self.markers.get(mode, {}).get(model, {}).get(column) else " "
                    cells.append(f"{star}{agg['mean']:.4f} ± {agg['std']:.4f}")
                lines.append(f"{model:<14}" + "".join(f"{cell:>20}" for cell in cells))
            lines.append("")
        lines.append("* significantly above both baselines (paired t-test, p < 0.01)")
        return "\n".join(lines) + "\n"


def _derive_seed(base: int, *key: int) -> int:
    seq = np.random.SeedSequence(base & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return int(seq.generate_state(1, np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


def _aggregate(folds: list[Metrics]) -> dict:
    out = {}
    for column in METRIC_COLUMNS:
        values = np.array([getattr(m, column) for m in folds])
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[column] = {"mean": float(values.mean()), "std": std}
    return out


def run_experiment(
    cases: Sequence[LabeledCase],
    config: ExperimentConfig,
    export_dir: str | Path | None = None,
) -> EvalReport:
    """The full protocol: rebalance, stratified folds, per-fold Grams and
    cross-Grams, one net per metric, both baselines, aggregate scores,
    pairwise paired t-tests, and (optionally) fold-0 embedding CSVs.

    Deterministic for a fixed config: identical runs serialize identically.
    """
    cases = list(cases)
    report = EvalReport(meta={"config": config.as_dict(), "n_cases": len(cases)})
    kinds = (
        KernelKind.wl_subtree(config.wl_h),
        KernelKind.temporal_topological(config.alpha),
        KernelKind.vertex_histogram(),
    )
    models = list(config.metrics) + (list(BASELINE_MODELS) if config.include_baselines else [])

    for mode_index, mode in enumerate(config.balance_modes):
        subset = rebalance(cases, mode, seed=_derive_seed(config.seed, mode_index, 0))
        y = np.array([c.label for c in subset])
        plan = stratified_kfold(y, config.k, seed=_derive_seed(config.seed, mode_index, 1))
        graphs = [build_patient_graph(c) for c in subset]

        fold_metrics: dict[str, list[Metrics]] = {m: [] for m in models}
        baseline_preds = (
            run_baselines(subset, plan, seed=_derive_seed(config.seed, mode_index, 2))
            if config.include_baselines
            else {}
        )

        for f in range(plan.k):
            training, test = plan.fold(f)
            train_graphs = [graphs[i] for i in training]
            test_graphs = [graphs[i] for i in test]
            grams = [gram_matrix(kind, train_graphs) for kind in kinds]
            crosses = [
                cross_gram(kind, test_graphs, train_graphs, gram.self_kernels)
                for kind, gram in zip(kinds, grams)
            ]
            for metric_index, metric in enumerate(config.metrics):
                net_seed = _derive_seed(config.seed, mode_index, 3, f, metric_index)
                net, _ = train(grams, y[training], config.net_config(metric, net_seed))
                probs, preds = predict(net, crosses)
                fold_metrics[metric].append(compute_metrics(y[test], probs, preds))
                if export_dir is not None and f == 0:
                    _write_fold_embeddings(
                        Path(export_dir), mode, metric, net, subset, grams, crosses, training, test
                    )
            for model, per_fold in baseline_preds.items():
                probs, preds = per_fold[f]
                fold_metrics[model].append(compute_metrics(y[test], probs, preds))

        report.results[mode] = {
            model: {
                "folds": [m.as_dict() for m in fold_metrics[model]],
                "aggregate": _aggregate(fold_metrics[model]),
            }
            for model in models
        }

        pairs = {}
        for i, model_a in enumerate(models):
            for model_b in models[i + 1 :]:
                cell = {}
                for column in METRIC_COLUMNS:
                    scores_a = [getattr(m, column) for m in fold_metrics[model_a]]
                    scores_b = [getattr(m, column) for m in fold_metrics[model_b]]
                    result = paired_t_test(scores_a, scores_b)
                    cell[column] = {
                        "t": result.t,
                        "p": result.p,
                        "significant": result.significant,
                        "degenerate": result.degenerate,
                    }
                pairs[f"{model_a}_vs_{model_b}"] = cell
        report.t_tests[mode] = pairs

        if config.include_baselines:
            report.markers[mode] = {}
            for metric in config.metrics:
                report.markers[mode][metric] = {}
                for column in METRIC_COLUMNS:
                    beats_all = True
                    for baseline in BASELINE_MODELS:
                        key = f"{metric}_vs_{baseline}"
                        cell = pairs[key][column]
                        mean_model = report.results[mode][metric]["aggregate"][column]["mean"]
                        mean_base = report.results[mode][baseline]["aggregate"][column]["mean"]
                        if not (cell["significant"] and mean_model > mean_base):
                            beats_all = False
                    report.markers[mode][metric][column] = beats_all
    return report


def _write_fold_embeddings(export_dir, mode, metric, net, subset, grams, crosses, training, test):
    export_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        np.vstack([gram.values, cross]) for gram, cross in zip(grams, crosses)
    ]
    order = np.concatenate([training, test])
    ids = [subset[i].record.patient_id for i in order]
    labels = [subset[i].label for i in order]
    splits = ["train"] * len(training) + ["test"] * len(test)
    csv = export_embeddings(net, tuple(rows), labels, ids, splits)
    path = export_dir / f"embeddings_{mode}_{metric}.csv"
    path.write_text(csv, encoding="utf-8")
