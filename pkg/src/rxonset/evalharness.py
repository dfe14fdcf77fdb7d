"""Evaluation statistics for disease-level onsets against recorded
diagnoses: time differences, tolerance-window recall curves, the
density-recall association, and pre-cutover detection fractions.

The reference diagnosis date for a (patient, icd) pair is the earliest
recorded diagnosis. Recall is computed against recorded diagnoses only
and is therefore a lower bound on detection coverage (diagnosis coding
is incomplete and not missing at random).
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

logger = logging.getLogger(__name__)

DEFAULT_DELTAS = (30, 60, 90, 180, 365, 730)


class UndefinedCorrelationError(ValueError):
    """Correlation requested on a degenerate (zero-variance) sample."""


def first_diagnosis_dates(diagnoses) -> dict[tuple[str, str], int]:
    """Earliest recorded diagnosis per (patient, icd)."""
    first: dict[tuple[str, str], int] = {}
    for diag in diagnoses:
        key = (diag.patient_id, diag.icd_code)
        if key not in first or diag.date < first[key]:
            first[key] = diag.date
    return first


@dataclass
class DiffSample:
    """Per (icd, method): diagnosis-minus-onset day differences for
    matched pairs, plus the count of diagnosed pairs with no onset."""

    diffs: list[int] = field(default_factory=list)
    n_unmatched: int = 0

    @property
    def n_matched(self) -> int:
        return len(self.diffs)

    def summary(self) -> dict:
        if not self.diffs:
            return {"n": 0, "n_unmatched": self.n_unmatched}
        arr = np.asarray(self.diffs)
        q25, q75 = np.percentile(arr, [25, 75])
        return {
            "n": int(arr.size),
            "n_unmatched": self.n_unmatched,
            "mean": float(arr.mean()),
            "median": float(np.median(arr)),
            "q25": float(q25),
            "q75": float(q75),
        }


@dataclass
class TimeDiffStats:
    samples: dict[tuple[str, str], DiffSample] = field(default_factory=dict)

    def get(self, icd: str, method: str) -> DiffSample:
        return self.samples.get((icd, method), DiffSample())

    @property
    def methods(self) -> list[str]:
        return sorted({m for _, m in self.samples})


def time_differences(disease_onsets, diagnoses) -> TimeDiffStats:
    """diff = diagnosis date - inferred onset date, one value per matched
    (patient, icd) pair; negative means inferred onset precedes the
    recorded diagnosis. Diagnosed pairs without an onset are tallied as
    unmatched per method."""
    reference = first_diagnosis_dates(diagnoses)
    onset_by = {(rec.patient_id, rec.icd_code, rec.method): rec.onset_date for rec in disease_onsets}
    methods = sorted({rec.method for rec in disease_onsets})

    stats = TimeDiffStats()
    for method in methods:
        for (pid, icd), diag_date in reference.items():
            sample = stats.samples.setdefault((icd, method), DiffSample())
            onset = onset_by.get((pid, icd, method))
            if onset is None:
                sample.n_unmatched += 1
            else:
                sample.diffs.append(diag_date - onset)
    return stats


@dataclass
class RecallCurve:
    """recall[icd][method] = [(delta, recall)] over the delta grid;
    n_diagnosed[icd] is the method-independent denominator."""

    points: dict[str, dict[str, list[tuple[int, float]]]] = field(default_factory=dict)
    n_diagnosed: dict[str, int] = field(default_factory=dict)

    def recall_at_delta(self, icd: str, method: str, delta: int) -> float | None:
        for d, r in self.points.get(icd, {}).get(method, []):
            if d == delta:
                return r
        return None


def recall_at(disease_onsets, diagnoses, deltas=DEFAULT_DELTAS) -> RecallCurve:
    """Per icd and method, the fraction of diagnosed patients whose
    inferred onset falls within +-delta days of their first recorded
    diagnosis. ICDs with no diagnosed patients are excluded with a
    warning."""
    deltas = sorted(deltas)
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    reference = first_diagnosis_dates(diagnoses)
    diagnosed_by_icd: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for (pid, icd), date in reference.items():
        diagnosed_by_icd[icd].append((pid, date))

    onset_by = {(r.patient_id, r.icd_code, r.method): r.onset_date for r in disease_onsets}
    methods = sorted({r.method for r in disease_onsets})
    onset_icds = {r.icd_code for r in disease_onsets}
    for icd in sorted(onset_icds - set(diagnosed_by_icd)):
        logger.warning("icd %s has onsets but zero diagnosed patients; excluded", icd)

    curve = RecallCurve()
    for icd, patients in sorted(diagnosed_by_icd.items()):
        curve.n_diagnosed[icd] = len(patients)
        curve.points[icd] = {}
        for method in methods:
            abs_errors = []
            for pid, diag_date in patients:
                onset = onset_by.get((pid, icd, method))
                if onset is not None:
                    abs_errors.append(abs(onset - diag_date))
            errs = np.asarray(abs_errors) if abs_errors else np.empty(0)
            curve.points[icd][method] = [
                (d, float((errs <= d).sum()) / len(patients)) for d in deltas
            ]
    return curve


@dataclass
class DensityRecallResult:
    densities: dict[str, float]
    recall365: dict[str, dict[str, float]]  # icd -> method -> recall
    pearson: dict[str, float]  # method -> r


def density_recall_correlation(
    recall365: dict[str, dict[str, float]], prescriptions, diagnoses
) -> DensityRecallResult:
    """Density = median prescription count among an ICD's diagnosed
    patients; correlated per method against recall at the 365-day
    window. Needs >= 3 ICDs and non-degenerate variance on both sides."""
    if len(recall365) < 3:
        raise ValueError(f"need >= 3 ICDs for correlation, got {len(recall365)}")
    rx_count: dict[str, int] = defaultdict(int)
    for ev in prescriptions:
        rx_count[ev.patient_id] += 1
    diagnosed: dict[str, set] = defaultdict(set)
    for diag in diagnoses:
        diagnosed[diag.icd_code].add(diag.patient_id)

    densities = {}
    for icd in sorted(recall365):
        patients = diagnosed.get(icd)
        if not patients:
            continue
        densities[icd] = float(np.median([rx_count.get(p, 0) for p in patients]))

    icds = sorted(densities)
    if len(icds) < 3:
        raise ValueError("fewer than 3 ICDs have diagnosed patients")
    dens = np.asarray([densities[i] for i in icds])
    methods = sorted({m for per in recall365.values() for m in per})
    pearson = {}
    for method in methods:
        rec = np.asarray([recall365[i].get(method, 0.0) for i in icds])
        if np.ptp(dens) == 0 or np.ptp(rec) == 0:
            raise UndefinedCorrelationError(
                f"zero variance in density or recall for method {method}"
            )
        r, _ = sps.pearsonr(dens, rec)
        pearson[method] = float(r)
    return DensityRecallResult(
        densities=densities,
        recall365={i: dict(recall365[i]) for i in icds},
        pearson=pearson,
    )


def pre_cutover_fraction(disease_onsets, cutover_date: int, icd_code: str) -> dict[str, float]:
    """Fraction of an ICD's inferred onsets dated before the cutover,
    per method; methods with no onsets for the ICD are absent."""
    counts: dict[str, int] = defaultdict(int)
    early: dict[str, int] = defaultdict(int)
    for rec in disease_onsets:
        if rec.icd_code != icd_code:
            continue
        counts[rec.method] += 1
        if rec.onset_date < cutover_date:
            early[rec.method] += 1
    return {m: early[m] / counts[m] for m in sorted(counts)}


# --- plot-ready outputs -------------------------------------------------------


def write_timediff_csv(path, stats: TimeDiffStats, disease_onsets, diagnoses) -> None:
    """Raw matched differences: icd,method,patient_id,diff_days."""
    reference = first_diagnosis_dates(diagnoses)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("icd", "method", "patient_id", "diff_days"))
        for rec in sorted(disease_onsets, key=lambda r: (r.icd_code, r.method, r.patient_id)):
            diag_date = reference.get((rec.patient_id, rec.icd_code))
            if diag_date is not None:
                writer.writerow((rec.icd_code, rec.method, rec.patient_id, diag_date - rec.onset_date))


def write_recall_csv(path, curve: RecallCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("icd", "method", "delta", "recall", "n_diagnosed"))
        for icd in sorted(curve.points):
            for method in sorted(curve.points[icd]):
                for delta, recall in curve.points[icd][method]:
                    writer.writerow((icd, method, delta, repr(recall), curve.n_diagnosed[icd]))


def write_density_csv(path, result: DensityRecallResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("icd", "density", "recall365_changepoint", "recall365_naive"))
        for icd in sorted(result.densities):
            per = result.recall365.get(icd, {})
            writer.writerow(
                (
                    icd,
                    repr(result.densities[icd]),
                    repr(per.get("changepoint", 0.0)),
                    repr(per.get("naive", 0.0)),
                )
            )


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
