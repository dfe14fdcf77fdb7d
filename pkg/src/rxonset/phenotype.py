"""Drug-disease dictionary and disease-level treated-phenotype onsets.

The dictionary is learned from temporal co-occurrence on training data:
every detected drug onset is associated with all of that patient's
diagnoses falling in a window around the onset date, pairs with enough
support are scored by alignment rate (associated diagnosis events over
total detected onsets for the drug), and each ICD keeps its top-ranked
drugs. Disease-level inference then takes, per patient and ICD, the
earliest detected onset among the ICD's drugs.

The naive baseline triggers on the first prescription of any listed drug
carrying the administrative chronic label; unlike the change-point
method it needs only a single prescription.
"""

from __future__ import annotations

import csv
import json
import logging
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .changepoint import METHOD_NAIVE, OnsetRecord
from .events import format_day, parse_day

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DISEASE_ONSET_COLUMNS = ("patient_id", "icd", "onset_date", "source_drug", "method")


class SchemaVersionError(ValueError):
    """Dictionary file written by an incompatible schema version."""


@dataclass(frozen=True)
class DictionaryConfig:
    """Windows in days; support/alignment thresholds are strict (>)."""

    window_before: int = 90
    window_after: int = 365
    min_support: int = 25
    min_alignment: float = 0.05
    max_drugs: int = 30
    min_drugs: int = 10
    dedup_per_onset: bool = False


@dataclass(frozen=True)
class DictEntry:
    drug_code: str
    alignment_rate: float
    support: int


@dataclass
class PhenotypeDictionary:
    entries: dict[str, list[DictEntry]] = field(default_factory=dict)
    config: DictionaryConfig = DictionaryConfig()
    train_patients: tuple[str, ...] | None = None

    def drugs_for(self, icd_code: str) -> list[DictEntry]:
        return self.entries.get(icd_code, [])

    @property
    def icd_codes(self) -> list[str]:
        return sorted(self.entries)

    def audit(self) -> list[str]:
        """Threshold conformance check; returns violations (empty = ok)."""
        problems = []
        cfg = self.config
        for icd, drugs in self.entries.items():
            if not cfg.min_drugs <= len(drugs) <= cfg.max_drugs:
                problems.append(f"{icd}: {len(drugs)} drugs outside [{cfg.min_drugs}, {cfg.max_drugs}]")
            rates = [d.alignment_rate for d in drugs]
            if rates != sorted(rates, reverse=True):
                problems.append(f"{icd}: drugs not sorted by alignment rate")
            for d in drugs:
                if d.support <= cfg.min_support:
                    problems.append(f"{icd}/{d.drug_code}: support {d.support} <= {cfg.min_support}")
                if d.alignment_rate <= cfg.min_alignment:
                    problems.append(
                        f"{icd}/{d.drug_code}: alignment {d.alignment_rate} <= {cfg.min_alignment}"
                    )
        return problems


@dataclass(frozen=True)
class DiseaseOnset:
    patient_id: str
    icd_code: str
    onset_date: int
    source_drug: str
    method: str


def build_dictionary(
    onsets,
    diagnoses,
    config: DictionaryConfig = DictionaryConfig(),
    train_patients=None,
) -> PhenotypeDictionary:
    """Two-pass build: associate diagnoses to onsets in the window, then
    threshold and rank. Empty inputs yield an empty dictionary with a
    warning rather than an error.
    """
    onsets = list(onsets)
    diagnoses = list(diagnoses)
    train = tuple(sorted(train_patients)) if train_patients else None
    if not onsets or not diagnoses:
        logger.warning(
            "empty dictionary build: %d onsets, %d diagnoses", len(onsets), len(diagnoses)
        )
        return PhenotypeDictionary(entries={}, config=config, train_patients=train)

    diag_by_patient: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for diag in diagnoses:
        diag_by_patient[diag.patient_id].append((diag.date, diag.icd_code))
    for rows in diag_by_patient.values():
        rows.sort()

    onsets_per_drug: Counter = Counter()
    support: Counter = Counter()
    for onset in onsets:
        onsets_per_drug[onset.drug_code] += 1
        rows = diag_by_patient.get(onset.patient_id)
        if not rows:
            continue
        dates = [d for d, _ in rows]
        lo = bisect_left(dates, onset.onset_date - config.window_before)
        hi = bisect_right(dates, onset.onset_date + config.window_after)
        window = rows[lo:hi]
        if config.dedup_per_onset:
            for icd in {icd for _, icd in window}:
                support[(onset.drug_code, icd)] += 1
        else:
            for _, icd in window:
                support[(onset.drug_code, icd)] += 1

    by_icd: dict[str, list[DictEntry]] = defaultdict(list)
    for (drug, icd), count in support.items():
        if count <= config.min_support:
            continue
        rate = count / onsets_per_drug[drug]
        if rate <= config.min_alignment:
            continue
        by_icd[icd].append(DictEntry(drug_code=drug, alignment_rate=rate, support=count))

    entries: dict[str, list[DictEntry]] = {}
    for icd in sorted(by_icd):
        ranked = sorted(by_icd[icd], key=lambda e: (-e.alignment_rate, e.drug_code))
        ranked = ranked[: config.max_drugs]
        if len(ranked) >= config.min_drugs:
            entries[icd] = ranked
    return PhenotypeDictionary(entries=entries, config=config, train_patients=train)


def save_dictionary(dictionary: PhenotypeDictionary, path) -> None:
    cfg = dictionary.config
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "window_before": cfg.window_before,
            "window_after": cfg.window_after,
            "min_support": cfg.min_support,
            "min_alignment": cfg.min_alignment,
            "max_drugs": cfg.max_drugs,
            "min_drugs": cfg.min_drugs,
            "dedup_per_onset": cfg.dedup_per_onset,
        },
        "train_patients": list(dictionary.train_patients)
        if dictionary.train_patients
        else None,
        "entries": {
            icd: [
                {"drug": e.drug_code, "alignment_rate": e.alignment_rate, "support": e.support}
                for e in drugs
            ]
            for icd, drugs in sorted(dictionary.entries.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dictionary(path) -> PhenotypeDictionary:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dictionary file not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"dictionary schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    config = DictionaryConfig(**payload["config"])
    entries = {
        icd: [
            DictEntry(
                drug_code=rec["drug"],
                alignment_rate=rec["alignment_rate"],
                support=rec["support"],
            )
            for rec in drugs
        ]
        for icd, drugs in payload["entries"].items()
    }
    train = payload.get("train_patients")
    return PhenotypeDictionary(
        entries=entries, config=config, train_patients=tuple(train) if train else None
    )


def _pick_earliest(candidates):
    """candidates: (date, -alignment_rate, drug_code) tie-break order."""
    return min(candidates)


def infer_disease_onsets(onsets, dictionary: PhenotypeDictionary) -> list[DiseaseOnset]:
    """Per (patient, ICD): earliest detected onset among the ICD's drugs.

    Date ties go to the drug with the higher alignment rate, then the
    lexicographically smaller code.
    """
    drug_to_icds: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for icd, drugs in dictionary.entries.items():
        for entry in drugs:
            drug_to_icds[entry.drug_code].append((icd, entry.alignment_rate))

    best: dict[tuple[str, str], tuple[int, float, str, str]] = {}
    for rec in onsets:
        for icd, rate in drug_to_icds.get(rec.drug_code, ()):
            key = (rec.patient_id, icd)
            cand = (rec.onset_date, -rate, rec.drug_code, rec.method)
            if key not in best or cand < best[key]:
                best[key] = cand

    return [
        DiseaseOnset(
            patient_id=pid,
            icd_code=icd,
            onset_date=date,
            source_drug=drug,
            method=method,
        )
        for (pid, icd), (date, _, drug, method) in sorted(best.items())
    ]


def naive_baseline(trajectories, dictionary: PhenotypeDictionary) -> list[DiseaseOnset]:
    """Rule-based trigger: per (patient, ICD), the first chronic-labeled
    prescription event across the ICD's drugs. A single prescription
    suffices; patients with no chronic-labeled listed-drug events yield
    no record.
    """
    first_chronic: dict[tuple[str, str], int] = {}
    for traj in trajectories:
        for ev in traj.events:
            if ev.chronic_label:
                key = (traj.patient_id, traj.drug_code)
                if key not in first_chronic or ev.date < first_chronic[key]:
                    first_chronic[key] = ev.date
                break  # events are time-ordered; first chronic found

    drug_to_icds: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for icd, drugs in dictionary.entries.items():
        for entry in drugs:
            drug_to_icds[entry.drug_code].append((icd, entry.alignment_rate))

    best: dict[tuple[str, str], tuple[int, float, str]] = {}
    for (pid, drug), date in first_chronic.items():
        for icd, rate in drug_to_icds.get(drug, ()):
            key = (pid, icd)
            cand = (date, -rate, drug)
            if key not in best or cand < best[key]:
                best[key] = cand

    return [
        DiseaseOnset(
            patient_id=pid,
            icd_code=icd,
            onset_date=date,
            source_drug=drug,
            method=METHOD_NAIVE,
        )
        for (pid, icd), (date, _, drug) in sorted(best.items())
    ]


def naive_onset_records(trajectories) -> list[OnsetRecord]:
    """Drug-level naive onsets (first chronic-labeled event per pair),
    for evaluations that bypass the dictionary."""
    records = []
    for traj in trajectories:
        for ev in traj.events:
            if ev.chronic_label:
                records.append(
                    OnsetRecord(
                        patient_id=traj.patient_id,
                        drug_code=traj.drug_code,
                        onset_date=ev.date,
                        margin=0.0,
                        method=METHOD_NAIVE,
                    )
                )
                break
    records.sort(key=lambda r: (r.patient_id, r.drug_code))
    return records


def write_disease_onsets_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DISEASE_ONSET_COLUMNS)
        for rec in records:
            writer.writerow(
                (rec.patient_id, rec.icd_code, format_day(rec.onset_date), rec.source_drug, rec.method)
            )


def read_disease_onsets_csv(path) -> list[DiseaseOnset]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"disease onsets file not found: {path}")
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                DiseaseOnset(
                    patient_id=row["patient_id"],
                    icd_code=row["icd"],
                    onset_date=parse_day(row["onset_date"]),
                    source_drug=row["source_drug"],
                    method=row["method"],
                )
            )
    return records
