"""Input-validation helpers shared by the estimator classes."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .graphs import PatientGraph, build_patient_graph
from .records import LabeledCase


def as_graphs(X) -> list[PatientGraph]:
    """Coerce estimator input into patient graphs.

    Accepts a non-empty sequence of :class:`PatientGraph` or of
    :class:`LabeledCase` (graphs get built on the fly).
    """
    items = list(X)
    if not items:
        raise ValueError("X must contain at least one case")
    if all(isinstance(item, PatientGraph) for item in items):
        return items
    if all(isinstance(item, LabeledCase) for item in items):
        return [build_patient_graph(case) for case in items]
    raise TypeError(
        "X must be a sequence of PatientGraph or LabeledCase, got "
        f"{type(items[0]).__name__}"
    )


def check_binary_labels(y, n_samples: int) -> np.ndarray:
    """Validate y as an n-vector of 0/1 integers containing both classes."""
    labels = np.asarray(y)
    if labels.shape != (n_samples,):
        raise ValueError(f"y must have shape ({n_samples},), got {labels.shape}")
    labels = labels.astype(int)
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("y must contain only 0/1 labels")
    if len(np.unique(labels)) < 2:
        raise ValueError("y must contain both classes")
    return labels


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
