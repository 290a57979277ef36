"""Linear baselines on L2-normalized bag-of-codes features.

Both models are trained by deterministic seeded descent on the usual
C-weighted objectives (C = 1): full-batch gradient descent for the logistic
regression, decaying-step subgradient descent for the hinge loss.  The bias
is folded into the weights as a constant feature.
"""

from __future__ import annotations

import numpy as np

from .records import LabeledCase

LR_ITERATIONS = 500
SVM_ITERATIONS = 500


def bag_of_codes(cases: list[LabeledCase], vocabulary: dict[str, int]) -> np.ndarray:
    """L2-normalized event-code count vectors; codes outside the vocabulary
    (unseen at training time) are dropped."""
    out = np.zeros((len(cases), len(vocabulary) + 1))
    for i, case in enumerate(cases):
        for event in case.record.events:
            j = vocabulary.get(event.code)
            if j is not None:
                out[i, j] += 1.0
        norm = np.linalg.norm(out[i, :-1])
        if norm > 0:
            out[i, :-1] /= norm
        out[i, -1] = 1.0  # bias feature
    return out


def build_vocabulary(cases: list[LabeledCase]) -> dict[str, int]:
    codes = sorted({e.code for c in cases for e in c.record.events})
    return {code: i for i, code in enumerate(codes)}


class LogisticRegressionGD:
    """min_w 0.5 ||w||^2 + C * sum_i log(1 + exp(-y_i w.x_i)), y in {-1, +1}."""

    def __init__(self, c: float = 1.0, iterations: int = LR_ITERATIONS, seed: int = 0):
        self.c = c
        self.iterations = iterations
        self.seed = seed
        self.weights: np.ndarray | None = None

    def fit(self, features: np.ndarray, labels) -> "LogisticRegressionGD":
        x = np.asarray(features, dtype=float)
        y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
        rng = np.random.default_rng(self.seed & 0xFFFFFFFFFFFFFFFF)
        w = rng.uniform(-0.01, 0.01, size=x.shape[1])
        # rows are unit-norm (plus bias), so 1 + 0.25 * C * n bounds the curvature
        step = 1.0 / (1.0 + 0.25 * self.c * x.shape[0])
        for _ in range(self.iterations):
            margins = y * (x @ w)
            sig = 1.0 / (1.0 + np.exp(margins))
            grad = w - self.c * (x.T @ (y * sig))
            w = w - step * grad
        self.weights = w
        return self

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("model is not fitted")
        return np.asarray(features, dtype=float) @ self.weights

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision_function(features)))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.predict_proba(features) >= 0.5).astype(int)


class LinearSVMSubgradient:
    """min_w 0.5 ||w||^2 + C * sum_i max(0, 1 - y_i w.x_i), y in {-1, +1}.

    Full-batch subgradient descent with the classic 1/(lambda t) step on the
    per-sample form of the objective; probabilities are a logistic squash of
    the margin.
    """

    def __init__(self, c: float = 1.0, iterations: int = SVM_ITERATIONS, seed: int = 0):
        self.c = c
        self.iterations = iterations
        self.seed = seed
        self.weights: np.ndarray | None = None

    def fit(self, features: np.ndarray, labels) -> "LinearSVMSubgradient":
        x = np.asarray(features, dtype=float)
        y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
        n = x.shape[0]
        lam = 1.0 / (self.c * n)
        rng = np.random.default_rng(self.seed & 0xFFFFFFFFFFFFFFFF)
        w = rng.uniform(-0.01, 0.01, size=x.shape[1])
        for t in range(1, self.iterations + 1):
            eta = 1.0 / (lam * t)
            violating = (y * (x @ w)) < 1.0
            data_grad = -(x[violating].T @ y[violating]) / n
            w = (1.0 - eta * lam) * w - eta * data_grad
        self.weights = w
        return self

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("model is not fitted")
        return np.asarray(features, dtype=float) @ self.weights

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision_function(features)))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.decision_function(features) >= 0.0).astype(int)


BASELINES = {
    "lr_baseline": LogisticRegressionGD,
    "svm_baseline": LinearSVMSubgradient,
}
