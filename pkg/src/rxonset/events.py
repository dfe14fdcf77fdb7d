"""Core domain records: prescription/diagnosis events and per-(patient, drug)
trajectories with derived inter-arrival intervals.

Dates are plain integer day counts (days since 1970-01-01); all arithmetic
is in whole days. CSV schemas:

    prescriptions: patient_id,drug_atc,date,chronic,renewable
    diagnoses:     patient_id,icd,date

with ISO-8601 dates and 0/1 booleans.
"""

from __future__ import annotations

import csv
import random
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date as _date
from enum import Enum
from pathlib import Path

EPOCH_ORDINAL = _date(1970, 1, 1).toordinal()

PRESCRIPTION_COLUMNS = ("patient_id", "drug_atc", "date", "chronic", "renewable")
DIAGNOSIS_COLUMNS = ("patient_id", "icd", "date")


def parse_day(text: str) -> int:
    """ISO-8601 date string -> integer days since 1970-01-01."""
    return _date.fromisoformat(text.strip()).toordinal() - EPOCH_ORDINAL


def format_day(day: int) -> str:
    return _date.fromordinal(day + EPOCH_ORDINAL).isoformat()


def year_of_day(day: int) -> int:
    return _date.fromordinal(day + EPOCH_ORDINAL).year


class Regime(str, Enum):
    """Dispensing regime of a prescription (drives refill time scale)."""

    RENEWABLE = "renewable"
    NON_RENEWABLE = "non_renewable"


@dataclass(frozen=True)
class PrescriptionEvent:
    patient_id: str
    drug_code: str
    date: int
    chronic_label: bool
    renewable: bool

    def __post_init__(self):
        if not self.drug_code:
            raise ValueError("drug_code must be non-empty")

    @property
    def regime(self) -> Regime:
        return Regime.RENEWABLE if self.renewable else Regime.NON_RENEWABLE


@dataclass(frozen=True)
class DiagnosisEvent:
    patient_id: str
    icd_code: str
    date: int

    def __post_init__(self):
        if not self.icd_code:
            raise ValueError("icd_code must be non-empty")


@dataclass(frozen=True)
class Interval:
    """Inter-arrival gap between consecutive prescriptions of one pair.

    Regime and chronic label are taken from the event that opens the
    interval: its dispensing policy governs when the refill occurs.
    """

    tau: int
    regime: Regime
    chronic_label: bool

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1 day, got {self.tau}")


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered prescription sequence for one (patient, drug) pair."""

    patient_id: str
    drug_code: str
    events: tuple[PrescriptionEvent, ...]
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        if not self.events:
            raise ValueError("trajectory needs at least one event")
        if len(self.intervals) != len(self.events) - 1:
            raise ValueError("interval count must be event count - 1")

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def taus(self) -> tuple[int, ...]:
        return tuple(iv.tau for iv in self.intervals)


@dataclass
class RowError:
    line: int
    message: str


@dataclass
class IngestReport:
    path: str
    n_rows: int = 0
    errors: list[RowError] = field(default_factory=list)

    @property
    def n_errors(self) -> int:
        return len(self.errors)


def _parse_bool(text: str) -> bool:
    text = text.strip()
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"boolean column must be 0 or 1, got {text!r}")


def ingest_prescriptions(
    path, columns: dict[str, str] | None = None
) -> tuple[list[PrescriptionEvent], IngestReport]:
    """Read a prescriptions CSV. Malformed rows are tallied in the report
    with their line numbers, never silently dropped.

    `columns` optionally remaps logical field names to header names,
    e.g. {"drug_atc": "atc5"}.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prescriptions file not found: {path}")
    names = {c: c for c in PRESCRIPTION_COLUMNS}
    if columns:
        names.update(columns)
    events: list[PrescriptionEvent] = []
    report = IngestReport(path=str(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            report.n_rows += 1
            try:
                events.append(
                    PrescriptionEvent(
                        patient_id=row[names["patient_id"]].strip(),
                        drug_code=row[names["drug_atc"]].strip(),
                        date=parse_day(row[names["date"]]),
                        chronic_label=_parse_bool(row[names["chronic"]]),
                        renewable=_parse_bool(row[names["renewable"]]),
                    )
                )
            except (KeyError, ValueError, TypeError, AttributeError) as exc:
                report.errors.append(RowError(line=lineno, message=str(exc)))
    return events, report


def ingest_diagnoses(
    path, columns: dict[str, str] | None = None
) -> tuple[list[DiagnosisEvent], IngestReport]:
    """Read a diagnoses CSV; same error-tally contract as prescriptions."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"diagnoses file not found: {path}")
    names = {c: c for c in DIAGNOSIS_COLUMNS}
    if columns:
        names.update(columns)
    events: list[DiagnosisEvent] = []
    report = IngestReport(path=str(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            report.n_rows += 1
            try:
                events.append(
                    DiagnosisEvent(
                        patient_id=row[names["patient_id"]].strip(),
                        icd_code=row[names["icd"]].strip(),
                        date=parse_day(row[names["date"]]),
                    )
                )
            except (KeyError, ValueError, TypeError, AttributeError) as exc:
                report.errors.append(RowError(line=lineno, message=str(exc)))
    return events, report


def write_prescriptions(path, events) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRESCRIPTION_COLUMNS)
        for ev in events:
            writer.writerow(
                (
                    ev.patient_id,
                    ev.drug_code,
                    format_day(ev.date),
                    int(ev.chronic_label),
                    int(ev.renewable),
                )
            )


def write_diagnoses(path, events) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSIS_COLUMNS)
        for ev in events:
            writer.writerow((ev.patient_id, ev.icd_code, format_day(ev.date)))


def build_trajectories(events) -> list[Trajectory]:
    """Group prescriptions into per-(patient, drug) trajectories.

    Same-day duplicates for one pair collapse into a single event whose
    flags are the OR of the duplicates (the Weibull log-density diverges
    at tau=0, and day resolution cannot order same-day events). Intervals
    inherit regime/label from their opening event.
    """
    by_pair: dict[tuple[str, str], dict[int, list[PrescriptionEvent]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for ev in events:
        by_pair[(ev.patient_id, ev.drug_code)][ev.date].append(ev)

    trajectories = []
    for (pid, drug) in sorted(by_pair):
        collapsed = []
        for day in sorted(by_pair[(pid, drug)]):
            group = by_pair[(pid, drug)][day]
            collapsed.append(
                PrescriptionEvent(
                    patient_id=pid,
                    drug_code=drug,
                    date=day,
                    chronic_label=any(e.chronic_label for e in group),
                    renewable=any(e.renewable for e in group),
                )
            )
        intervals = tuple(
            Interval(
                tau=nxt.date - cur.date,
                regime=cur.regime,
                chronic_label=cur.chronic_label,
            )
            for cur, nxt in zip(collapsed, collapsed[1:])
        )
        trajectories.append(
            Trajectory(
                patient_id=pid,
                drug_code=drug,
                events=tuple(collapsed),
                intervals=intervals,
            )
        )
    return trajectories


def split_patients(patients, train_fraction: float, seed: int) -> tuple[set, set]:
    """Deterministic random train/test partition of patient ids.

    Train size is floor(n * train_fraction); the partition is disjoint
    and exhaustive, and identical for identical inputs and seed.
    """
    if not patients:
        raise ValueError("cannot split an empty patient set")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ordered = sorted(patients)
    random.Random(seed).shuffle(ordered)
    n_train = int(len(ordered) * train_fraction)
    return set(ordered[:n_train]), set(ordered[n_train:])
