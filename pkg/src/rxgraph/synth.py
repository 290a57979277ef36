"""Synthetic cohort generation with a controllable class signal.

Success cases draw event codes from a base categorical distribution; failure
cases draw from the mixture ``s * shifted + (1 - s) * base`` where ``s`` is
the signal strength and the shifted distribution mirrors the base across the
two vocabulary halves.  Failure cases also stretch their day gaps in
proportion to ``s``, so both the label-histogram kernels and the temporal
kernel carry signal.  Short-term cohorts use tight Poisson gaps inside a
60-day history; chronic cohorts use heavy-tailed gamma gaps inside a ten-year
history (high variance by construction).

Generation is pure and seeded: every case derives its own RNG from
``(seed, case index)``, so identical seeds give byte-identical cohorts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .records import (
    Demographics,
    DiseaseSpec,
    EventKind,
    Gender,
    LabeledCase,
    MedicalEvent,
    PatientRecord,
    event_sort_key,
    format_disease_spec,
)

INDEX_CODE = "INDEX"
VISIT_CODE = "VISIT"
COMPLICATION_CODE = "COMPLICATION"
FOLLOWUP_CODE = "FOLLOWUP"

SHORT_HISTORY_DAYS = 60
SHORT_OUTCOME_DAYS = 60
CHRONIC_HISTORY_DAYS = 3650
CHRONIC_OUTCOME_DAYS = 365

_BASE_MAJOR_SHARE = 0.75  # base distribution's weight on the first vocab half
_CODE_MIX_CAP = 0.5  # mixture weight of the mirrored code distribution at full signal
_SHORT_GAP_MEAN = 2.0
_SHORT_GAP_SHIFT = 4.0
_CHRONIC_GAP_MEAN = 45.0
_CHRONIC_GAP_STRETCH = 1.5
_CHRONIC_GAP_SHAPE = 0.9  # gamma shape < 1: heavy-tailed gaps

_LABEL_STREAM = 0
_CASE_STREAM = 1
_OUTCOME_STREAM = 2

REBALANCE_MODES = ("balanced", "imbalanced_70_30")


@dataclass(frozen=True)
class DiseasePreset:
    """Failure ratio and disease kind for one of the seven reference cohorts."""

    name: str
    failure_ratio: float
    kind: str


PRESETS: dict[str, DiseasePreset] = {
    "uti": DiseasePreset("uti", 0.47, "short_term"),
    "aom": DiseasePreset("aom", 0.48, "short_term"),
    "pneumonia": DiseasePreset("pneumonia", 0.39, "short_term"),
    "cystitis": DiseasePreset("cystitis", 0.41, "short_term"),
    "htn": DiseasePreset("htn", 0.45, "chronic"),
    "lipid": DiseasePreset("lipid", 0.21, "chronic"),
    "dm": DiseasePreset("dm", 0.26, "chronic"),
}


@dataclass
class CohortSpec:
    """Knobs of the generator; ``from_preset`` fills ratio and kind."""

    n_cases: int
    failure_ratio: float = 0.5
    kind: str = "short_term"
    signal_strength: float = 0.5
    vocab_size: int = 30
    events_per_case: tuple[int, int] = (8, 16)
    seed: int = 0
    preset: str | None = None

    def __post_init__(self):
        if self.n_cases < 1:
            raise ValueError("n_cases must be >= 1")
        if not 0.0 < self.failure_ratio < 1.0:
            raise ValueError(f"failure_ratio must be in (0, 1), got {self.failure_ratio}")
        if self.kind not in ("short_term", "chronic"):
            raise ValueError(f"kind must be 'short_term' or 'chronic', got {self.kind!r}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError(f"signal_strength must be in [0, 1], got {self.signal_strength}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4")
        lo, hi = self.events_per_case
        if not (2 <= lo <= hi):
            raise ValueError(f"events_per_case must satisfy 2 <= lo <= hi, got {self.events_per_case}")

    @classmethod
    def from_preset(cls, name: str, n_cases: int, **overrides) -> "CohortSpec":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        preset = PRESETS[name]
        return cls(
            n_cases=n_cases,
            failure_ratio=preset.failure_ratio,
            kind=preset.kind,
            preset=name,
            **overrides,
        )


def disease_spec_for(spec: CohortSpec) -> DiseaseSpec:
    """The disease definition that labels this generator's output files.

    Short-term cohorts treat a recurrence of the index code as failure;
    chronic cohorts use a dedicated complication code.
    """
    if spec.kind == "short_term":
        return DiseaseSpec(
            name=spec.preset or "synthetic",
            index_codes=frozenset({INDEX_CODE}),
            failure_codes=frozenset({INDEX_CODE}),
            history_window_days=SHORT_HISTORY_DAYS,
            outcome_window_days=SHORT_OUTCOME_DAYS,
            kind="short_term",
        )
    return DiseaseSpec(
        name=spec.preset or "synthetic",
        index_codes=frozenset({INDEX_CODE}),
        failure_codes=frozenset({COMPLICATION_CODE}),
        history_window_days=CHRONIC_HISTORY_DAYS,
        outcome_window_days=CHRONIC_OUTCOME_DAYS,
        kind="chronic",
    )


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=key))


def _zipf_half(size: int) -> np.ndarray:
    w = 1.0 / (1.0 + np.arange(size))
    return w / w.sum()


def code_distribution(spec: CohortSpec, label: int) -> np.ndarray:
    """Event-code probabilities for one class.

    Failure mixes the mirrored (shifted) distribution into the base with
    weight ``_CODE_MIX_CAP * signal_strength``; at signal 0 the classes are
    identical.  The cap keeps codes a weak-to-moderate predictor even at
    full signal, so the visit-gap channel carries most of the separation.
    """
    v = spec.vocab_size
    first, second = v // 2, v - v // 2
    base = np.concatenate(
        [_BASE_MAJOR_SHARE * _zipf_half(first), (1.0 - _BASE_MAJOR_SHARE) * _zipf_half(second)]
    )
    if label == 0:
        return base
    shifted = np.concatenate(
        [(1.0 - _BASE_MAJOR_SHARE) * _zipf_half(first), _BASE_MAJOR_SHARE * _zipf_half(second)]
    )
    mix = _CODE_MIX_CAP * spec.signal_strength
    return mix * shifted + (1.0 - mix) * base


def _draw_gaps(rng: np.random.Generator, spec: CohortSpec, label: int, count: int) -> np.ndarray:
    s = spec.signal_strength if label == 1 else 0.0
    if spec.kind == "short_term":
        return rng.poisson(_SHORT_GAP_MEAN + _SHORT_GAP_SHIFT * s, size=count)
    mean = _CHRONIC_GAP_MEAN * (1.0 + _CHRONIC_GAP_STRETCH * s)
    gaps = rng.gamma(_CHRONIC_GAP_SHAPE, mean / _CHRONIC_GAP_SHAPE, size=count)
    return np.rint(gaps).astype(int)


def _history_days(spec: CohortSpec) -> int:
    return SHORT_HISTORY_DAYS if spec.kind == "short_term" else CHRONIC_HISTORY_DAYS


def _generate_case(spec: CohortSpec, index: int, label: int) -> LabeledCase:
    rng = _rng(spec.seed, _CASE_STREAM, index)
    history = _history_days(spec)
    gender = Gender.female if rng.random() < 0.5 else Gender.male
    age_lo = 18 if spec.kind == "short_term" else 40
    age = int(rng.integers(age_lo, 86))

    lo, hi = spec.events_per_case
    n_events = int(rng.integers(lo, hi + 1))
    gaps = _draw_gaps(rng, spec, label, n_events - 1)
    span = int(gaps.sum())
    if span > history - 1:
        gaps = np.floor(gaps * (history - 1) / span).astype(int)
        span = int(gaps.sum())

    dist = code_distribution(spec, label)
    start = history - span
    day = start
    seen: set[tuple[int, str, str]] = set()
    events: list[MedicalEvent] = []
    for position in range(n_events - 1):
        if position % 3 == 0:
            code, kind = VISIT_CODE, EventKind.diagnosis
        else:
            code = f"c{rng.choice(len(dist), p=dist):03d}"
            kind = EventKind.prescription
        key = (day, kind.value, code)
        if key not in seen:
            seen.add(key)
            events.append(MedicalEvent(code=code, day=day, kind=kind))
        day += int(gaps[position])
    events.append(MedicalEvent(code=INDEX_CODE, day=history, kind=EventKind.diagnosis))
    # Canonical same-day ordering, so re-reading an emitted cohort gives the
    # original event tuples back.
    events.sort(key=event_sort_key)

    record = PatientRecord(
        patient_id=f"p{index:05d}",
        demographics=Demographics(gender=gender, age_years=age),
        events=tuple(events),
    )
    return LabeledCase(record=record, label=label, index_day=history)


def generate_cohort(spec: CohortSpec) -> list[LabeledCase]:
    """Exactly ``n_cases`` cases with ``round(n_cases * failure_ratio)``
    failures, in seeded shuffled label order."""
    n_fail = int(round(spec.n_cases * spec.failure_ratio))
    labels = np.array([1] * n_fail + [0] * (spec.n_cases - n_fail))
    _rng(spec.seed, _LABEL_STREAM).shuffle(labels)
    return [_generate_case(spec, i, int(labels[i])) for i in range(spec.n_cases)]


def rebalance(cases: Sequence[LabeledCase], mode: str, seed: int) -> list[LabeledCase]:
    """Class rebalancing by seeded downsampling.

    ``balanced`` trims both classes to the minority count.
    ``imbalanced_70_30`` downsamples whichever side exceeds its 70:30 quota
    (majority trimmed to ``floor(minority * 70/30)``, or the minority to
    ``floor(majority * 30/70)``); ties treat the success class as majority.
    """
    if mode not in REBALANCE_MODES:
        raise ValueError(f"mode must be one of {REBALANCE_MODES}, got {mode!r}")
    failures = [c for c in cases if c.label == 1]
    successes = [c for c in cases if c.label == 0]
    if not failures or not successes:
        raise ValueError("rebalance needs at least one case of each class")
    rng = _rng(seed, 0)

    def sample(pool: list[LabeledCase], size: int) -> list[LabeledCase]:
        if size >= len(pool):
            return list(pool)
        idx = rng.choice(len(pool), size=size, replace=False)
        return [pool[i] for i in idx]

    if mode == "balanced":
        keep = min(len(failures), len(successes))
        out = sample(failures, keep) + sample(successes, keep)
    else:
        if len(failures) > len(successes):
            majority, minority = failures, successes
        else:
            majority, minority = successes, failures
        if len(majority) * 3 > len(minority) * 7:
            majority = sample(majority, (len(minority) * 7) // 3)
        else:
            minority = sample(minority, (len(majority) * 3) // 7)
        out = majority + minority
    order = rng.permutation(len(out))
    return [out[i] for i in order]


# ---------------------------------------------------------------------------
# file emission


def _outcome_event(spec: CohortSpec, case: LabeledCase, rng: np.random.Generator) -> MedicalEvent:
    disease = disease_spec_for(spec)
    delta = int(rng.integers(1, disease.outcome_window_days + 1))
    if case.label == 1:
        code = INDEX_CODE if spec.kind == "short_term" else COMPLICATION_CODE
        kind = EventKind.diagnosis
    else:
        code, kind = FOLLOWUP_CODE, EventKind.other
    return MedicalEvent(code=code, day=case.index_day + delta, kind=kind)


def write_cohort(out_dir: str | Path, cases: Iterable[LabeledCase], spec: CohortSpec) -> dict[str, Path]:
    """Emit events.tsv, demographics.tsv, labels.tsv and disease.cfg.

    The event file includes one post-index outcome event per case (the
    failure marker, or a benign follow-up), so labeling the files with
    disease.cfg reproduces the generated labels exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    event_lines: list[str] = []
    demo_lines: list[str] = []
    label_lines: list[str] = []
    for i, case in enumerate(cases):
        pid = case.record.patient_id
        for e in case.record.events:
            event_lines.append(f"{pid}\t{e.day}\t{e.kind.value}\t{e.code}")
        outcome = _outcome_event(spec, case, _rng(spec.seed, _OUTCOME_STREAM, i))
        event_lines.append(f"{pid}\t{outcome.day}\t{outcome.kind.value}\t{outcome.code}")
        demo = case.record.demographics
        demo_lines.append(f"{pid}\t{demo.gender.value}\t{demo.age_years}")
        label_lines.append(f"{pid}\t{case.label}\t{case.index_day}")
    paths = {
        "events": out / "events.tsv",
        "demographics": out / "demographics.tsv",
        "labels": out / "labels.tsv",
        "disease": out / "disease.cfg",
    }
    paths["events"].write_text("\n".join(event_lines) + "\n", encoding="utf-8")
    paths["demographics"].write_text("\n".join(demo_lines) + "\n", encoding="utf-8")
    paths["labels"].write_text("\n".join(label_lines) + "\n", encoding="utf-8")
    paths["disease"].write_text(format_disease_spec(disease_spec_for(spec)), encoding="utf-8")
    return paths
