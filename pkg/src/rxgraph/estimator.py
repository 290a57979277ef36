"""Scikit-learn style wrappers around the kernels and the embedding net.

``PatientGraphKernel`` is a transformer producing (cross-)Gram features, so
it composes with anything downstream that accepts a precomputed kernel.
``KernelEmbeddingClassifier`` bundles the three kernels and the trained net
behind the usual ``fit`` / ``predict`` / ``predict_proba`` surface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .kernels import KernelKind, cross_gram, gram_matrix, self_kernels
from .net import NetConfig, forward_embed, predict, train
from .validation import as_graphs, check_binary_labels

KERNEL_NAMES = ("wl_subtree", "temporal_topological", "vertex_histogram")


class PatientGraphKernel(BaseEstimator, TransformerMixin):
    """One graph kernel as a transformer.

    ``fit`` memorizes the training graphs; ``transform`` returns the
    normalized kernel rows of new cases against them, which is exactly the
    feature block the net consumes (and what e.g. an SVC with
    ``kernel="precomputed"`` expects).
    """

    def __init__(self, kernel: str = "wl_subtree", h: int = 2, alpha: float = 0.05,
                 normalize: bool = True):
        self.kernel = kernel
        self.h = h
        self.alpha = alpha
        self.normalize = normalize

    def _kind(self) -> KernelKind:
        if self.kernel == "wl_subtree":
            return KernelKind.wl_subtree(self.h)
        if self.kernel == "temporal_topological":
            return KernelKind.temporal_topological(self.alpha)
        if self.kernel == "vertex_histogram":
            return KernelKind.vertex_histogram()
        raise ValueError(f"kernel must be one of {KERNEL_NAMES}, got {self.kernel!r}")

    def fit(self, X, y=None):
        kind = self._kind()
        self.train_graphs_ = as_graphs(X)
        self.self_kernels_ = self_kernels(kind, self.train_graphs_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "train_graphs_")
        return cross_gram(
            self._kind(), as_graphs(X), self.train_graphs_,
            train_self_kernels=self.self_kernels_, normalize=self.normalize,
        )

    def fit_transform(self, X, y=None) -> np.ndarray:
        # the square Gram directly: symmetric, unit diagonal when normalized
        self.fit(X)
        gram = gram_matrix(self._kind(), self.train_graphs_, normalize=self.normalize)
        return gram.values


class KernelEmbeddingClassifier(BaseEstimator, ClassifierMixin):
    """The full model: three kernels fused into a contrastively regularized
    embedding with a sigmoid read-out.

    Parameters mirror :class:`rxgraph.net.NetConfig` plus the two kernel
    hyperparameters; X may be patient graphs or labeled cases.
    """

    def __init__(self, wl_h: int = 2, alpha: float = 0.05, embed_dim: int = 64,
                 fusion_dim: int = 16, margin_lambda: float = 1.0,
                 metric: str = "euclidean", learning_rate: float = 0.001,
                 batch_size: int = 64, max_epochs: int = 200,
                 early_stop_patience: int = 20, seed: int = 0):
        self.wl_h = wl_h
        self.alpha = alpha
        self.embed_dim = embed_dim
        self.fusion_dim = fusion_dim
        self.margin_lambda = margin_lambda
        self.metric = metric
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def _kinds(self) -> tuple[KernelKind, KernelKind, KernelKind]:
        return (
            KernelKind.wl_subtree(self.wl_h),
            KernelKind.temporal_topological(self.alpha),
            KernelKind.vertex_histogram(),
        )

    def _net_config(self) -> NetConfig:
        return NetConfig(
            embed_dim_per_kernel=self.embed_dim,
            fusion_dim=self.fusion_dim,
            classifier_dim=self.fusion_dim,
            margin_lambda=self.margin_lambda,
            metric=self.metric,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
        )

    def fit(self, X, y):
        graphs = as_graphs(X)
        labels = check_binary_labels(y, len(graphs))
        grams = [gram_matrix(kind, graphs) for kind in self._kinds()]
        self.net_, self.trace_ = train(grams, labels, self._net_config())
        self.train_graphs_ = graphs
        self.self_kernels_ = [gram.self_kernels for gram in grams]
        self.classes_ = np.array([0, 1])
        return self

    def _rows(self, X) -> tuple[np.ndarray, ...]:
        check_is_fitted(self, "net_")
        graphs = as_graphs(X)
        return tuple(
            cross_gram(kind, graphs, self.train_graphs_, train_self_kernels=sk)
            for kind, sk in zip(self._kinds(), self.self_kernels_)
        )

    def predict(self, X) -> np.ndarray:
        rows = self._rows(X)  # fitted check happens before net_ access
        _, preds = predict(self.net_, rows)
        return np.atleast_1d(preds)

    def predict_proba(self, X) -> np.ndarray:
        rows = self._rows(X)
        probs, _ = predict(self.net_, rows)
        probs = np.atleast_1d(probs)
        return np.column_stack([1.0 - probs, probs])

    def embed(self, X) -> np.ndarray:
        """Embedding-space coordinates of new cases."""
        rows = self._rows(X)
        return forward_embed(self.net_, rows)
