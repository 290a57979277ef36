"""Event-record data model, file parsing, and outcome labeling.

On-disk formats are plain UTF-8 tab-separated text:

* event file — one row per medical event with columns ``patient_id``,
  ``day`` (non-negative integer day offset), ``kind`` (``dx`` | ``rx`` |
  ``other``) and ``code``.  Exact duplicate rows are dropped silently.
* demographics file — columns ``patient_id``, ``gender`` (``F`` | ``M`` |
  ``U``) and ``age_years``.
* disease config — flat ``key=value`` lines with keys ``name``,
  ``index_codes`` (comma list), ``failure_codes`` (comma list),
  ``history_window_days``, ``outcome_window_days`` and ``kind``
  (``short_term`` | ``chronic``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable

log = logging.getLogger(__name__)

MAX_AGE_YEARS = 130

DAYS_PER_MONTH = 30
DAYS_PER_YEAR = 365


class DataFormatError(ValueError):
    """Raised when an input file violates its documented format."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EventKind(Enum):
    diagnosis = "dx"
    prescription = "rx"
    other = "other"


class Gender(Enum):
    female = "F"
    male = "M"
    unknown = "U"


@dataclass(frozen=True)
class MedicalEvent:
    """A single coded event on a patient timeline."""

    code: str
    day: int
    kind: EventKind

    def __post_init__(self):
        if not self.code:
            raise ValueError("event code must be non-empty")
        if self.day < 0:
            raise ValueError(f"event day must be >= 0, got {self.day}")
        if not isinstance(self.kind, EventKind):
            raise ValueError(f"invalid event kind: {self.kind!r}")


@dataclass(frozen=True)
class Demographics:
    gender: Gender
    age_years: int

    def __post_init__(self):
        if not isinstance(self.gender, Gender):
            raise ValueError(f"invalid gender: {self.gender!r}")
        if not 0 <= self.age_years <= MAX_AGE_YEARS:
            raise ValueError(f"age_years out of range [0, {MAX_AGE_YEARS}]: {self.age_years}")


def event_sort_key(event: MedicalEvent) -> tuple[int, str, str]:
    """Total order for events: day, then wire kind token, then code."""
    return (event.day, event.kind.value, event.code)


@dataclass(frozen=True)
class PatientRecord:
    """All known events for one patient, sorted by day."""

    patient_id: str
    demographics: Demographics
    events: tuple[MedicalEvent, ...]

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        days = [e.day for e in self.events]
        if any(b < a for a, b in zip(days, days[1:])):
            raise ValueError(f"events of patient {self.patient_id!r} are not sorted by day")


@dataclass(frozen=True)
class DiseaseSpec:
    """Cohort definition: index codes anchor a case, failure codes decide the label."""

    name: str
    index_codes: frozenset[str]
    failure_codes: frozenset[str]
    history_window_days: int
    outcome_window_days: int
    kind: str  # "short_term" | "chronic"

    def __post_init__(self):
        if not self.name:
            raise ValueError("disease name must be non-empty")
        if not self.index_codes:
            raise ValueError("index_codes must be non-empty")
        if not self.failure_codes:
            raise ValueError("failure_codes must be non-empty")
        if self.history_window_days <= 0:
            raise ValueError("history_window_days must be positive")
        if self.outcome_window_days <= 0:
            raise ValueError("outcome_window_days must be positive")
        if self.kind not in ("short_term", "chronic"):
            raise ValueError(f"kind must be 'short_term' or 'chronic', got {self.kind!r}")


@dataclass(frozen=True)
class LabeledCase:
    """A patient record truncated to the history window, plus its outcome label.

    ``label`` is 1 for treatment failure, 0 for success.  ``record.events``
    hold only events with day in ``[index_day - history_window, index_day]``.
    """

    record: PatientRecord
    label: int
    index_day: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.index_day < 0:
            raise ValueError("index_day must be >= 0")


def _as_lines(source: str | bytes | IO | Iterable[str]) -> list[str]:
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"input is not valid UTF-8: {exc}") from None
    if isinstance(source, str):
        return source.splitlines()
    if hasattr(source, "read"):
        return _as_lines(source.read())
    return [line.rstrip("\n") for line in source]


def parse_records(
    source: str | bytes | IO | Iterable[str],
    demographics: dict[str, Demographics] | None = None,
) -> list[PatientRecord]:
    """Parse an event file into one record per patient, sorted by patient_id.

    Exact duplicate rows collapse to one event.  Unknown patients in the
    ``demographics`` map are ignored; patients without a demographics entry
    default to gender unknown, age 0.
    """
    events: dict[str, set[MedicalEvent]] = {}
    for lineno, raw in enumerate(_as_lines(source), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        pid, day_s, kind_s, code = (p.strip() for p in parts)
        if not pid:
            raise DataFormatError("empty patient_id", lineno)
        try:
            day = int(day_s)
        except ValueError:
            raise DataFormatError(f"day is not an integer: {day_s!r}", lineno) from None
        if day < 0:
            raise DataFormatError(f"negative day: {day}", lineno)
        try:
            kind = EventKind(kind_s)
        except ValueError:
            raise DataFormatError(f"unknown event kind: {kind_s!r}", lineno) from None
        if not code:
            raise DataFormatError("empty event code", lineno)
        events.setdefault(pid, set()).add(MedicalEvent(code=code, day=day, kind=kind))

    demographics = demographics or {}
    default_demo = Demographics(gender=Gender.unknown, age_years=0)
    records = []
    for pid in sorted(events):
        records.append(
            PatientRecord(
                patient_id=pid,
                demographics=demographics.get(pid, default_demo),
                events=tuple(sorted(events[pid], key=event_sort_key)),
            )
        )
    return records


def parse_demographics(source: str | bytes | IO | Iterable[str]) -> dict[str, Demographics]:
    """Parse a demographics file into a patient_id -> Demographics map.

    Exact duplicate rows collapse silently; conflicting rows for the same
    patient raise.
    """
    out: dict[str, Demographics] = {}
    for lineno, raw in enumerate(_as_lines(source), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        pid, gender_s, age_s = (p.strip() for p in parts)
        if not pid:
            raise DataFormatError("empty patient_id", lineno)
        try:
            gender = Gender(gender_s)
        except ValueError:
            raise DataFormatError(f"unknown gender: {gender_s!r} (expected F/M/U)", lineno) from None
        try:
            age = int(age_s)
        except ValueError:
            raise DataFormatError(f"age_years is not an integer: {age_s!r}", lineno) from None
        try:
            demo = Demographics(gender=gender, age_years=age)
        except ValueError as exc:
            raise DataFormatError(str(exc), lineno) from None
        if pid in out and out[pid] != demo:
            raise DataFormatError(f"conflicting demographics for patient {pid!r}", lineno)
        out[pid] = demo
    return out


_DISEASE_KEYS = {
    "name",
    "index_codes",
    "failure_codes",
    "history_window_days",
    "outcome_window_days",
    "kind",
}


def parse_disease_spec(source: str | bytes | IO | Iterable[str]) -> DiseaseSpec:
    """Parse a flat key=value disease config."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(_as_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"expected key=value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _DISEASE_KEYS:
            raise DataFormatError(f"unknown disease config key: {key!r}", lineno)
        if key in values:
            raise DataFormatError(f"duplicate disease config key: {key!r}", lineno)
        values[key] = value.strip()
    missing = _DISEASE_KEYS - values.keys()
    if missing:
        raise DataFormatError(f"missing disease config keys: {sorted(missing)}")

    def codes(raw: str) -> frozenset[str]:
        return frozenset(c.strip() for c in raw.split(",") if c.strip())

    try:
        history = int(values["history_window_days"])
        outcome = int(values["outcome_window_days"])
    except ValueError as exc:
        raise DataFormatError(f"window is not an integer: {exc}") from None
    try:
        return DiseaseSpec(
            name=values["name"],
            index_codes=codes(values["index_codes"]),
            failure_codes=codes(values["failure_codes"]),
            history_window_days=history,
            outcome_window_days=outcome,
            kind=values["kind"],
        )
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def format_disease_spec(spec: DiseaseSpec) -> str:
    return "\n".join(
        [
            f"name={spec.name}",
            f"index_codes={','.join(sorted(spec.index_codes))}",
            f"failure_codes={','.join(sorted(spec.failure_codes))}",
            f"history_window_days={spec.history_window_days}",
            f"outcome_window_days={spec.outcome_window_days}",
            f"kind={spec.kind}",
        ]
    ) + "\n"


def read_records(path: str | Path, demographics: dict[str, Demographics] | None = None):
    return parse_records(Path(path).read_bytes(), demographics)


def read_demographics(path: str | Path) -> dict[str, Demographics]:
    return parse_demographics(Path(path).read_bytes())


def read_disease_spec(path: str | Path) -> DiseaseSpec:
    return parse_disease_spec(Path(path).read_bytes())


def label_cohort(records: Iterable[PatientRecord], disease: DiseaseSpec) -> list[LabeledCase]:
    """Label each record against a disease definition.

    The first event carrying an index code anchors the case at ``index_day``.
    The label is 1 iff any failure-code event falls in the half-open outcome
    window ``(index_day, index_day + outcome_window_days]``.  The returned
    record is truncated to ``[index_day - history_window_days, index_day]``.
    Records without an index event are excluded (reported as a summary count).
    """
    cases: list[LabeledCase] = []
    excluded = 0
    for record in records:
        index_event = next((e for e in record.events if e.code in disease.index_codes), None)
        if index_event is None:
            excluded += 1
            continue
        index_day = index_event.day
        lo = index_day - disease.history_window_days
        hi = index_day + disease.outcome_window_days
        failure = any(
            e.code in disease.failure_codes and index_day < e.day <= hi for e in record.events
        )
        truncated = tuple(e for e in record.events if lo <= e.day <= index_day)
        cases.append(
            LabeledCase(
                record=replace(record, events=truncated),
                label=1 if failure else 0,
                index_day=index_day,
            )
        )
    if excluded:
        log.info("label_cohort: excluded %d record(s) without an index event", excluded)
    return cases
