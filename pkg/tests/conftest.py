from __future__ import annotations

import pytest

from rxgraph.records import (
    Demographics,
    EventKind,
    Gender,
    LabeledCase,
    MedicalEvent,
    PatientRecord,
)
from rxgraph.synth import CohortSpec, generate_cohort


def make_case(patient_id: str, label: int, events, gender: str = "F", age: int = 40,
              index_day: int | None = None) -> LabeledCase:
    """Hand-build a labeled case from (day, kind, code) triples."""
    evs = tuple(
        MedicalEvent(day=d, kind=EventKind(k), code=c)
        for d, k, c in sorted(events)
    )
    record = PatientRecord(
        patient_id=patient_id,
        demographics=Demographics(gender=Gender(gender), age_years=age),
        events=evs,
    )
    return LabeledCase(record=record, label=label, index_day=index_day if index_day is not None else evs[-1].day)


@pytest.fixture(scope="session")
def small_cohort():
    """24 separable cases, enough for smoke experiments."""
    return generate_cohort(CohortSpec(n_cases=24, signal_strength=1.0, seed=42))


@pytest.fixture(scope="session")
def small_graphs(small_cohort):
    from rxgraph.graphs import build_patient_graph

    return [build_patient_graph(c) for c in small_cohort]
