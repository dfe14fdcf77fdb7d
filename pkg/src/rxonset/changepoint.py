"""Single change-point detection from sporadic to sustained prescribing.

For a trajectory with intervals tau_1..tau_n, candidate c scores the
first c-1 intervals under the exponential null and the rest under the
regime-specific Weibull model:

    l(c) = sum_{i<c} log p_null(tau_i) + sum_{i>=c} log p_chr(tau_i | r_i)

The winning candidate is accepted only when it beats the all-null score
by more than epsilon, an absolute minimum log-likelihood improvement.
c ranges over 1..n (c = 1 means therapy sustained from the first event);
the pure-null hypothesis is represented by rejection, not a candidate.
The null rate is fitted once per trajectory by closed-form MLE over all
its intervals and reused for the null model and every pre-change
segment, keeping both sides of the margin on a shared parameterization.

Segment sums use the same formulas as the renewal module's loglik
functions (exact integer prefix sums for the null, fsum for the Weibull
side), so a scan value equals the sum of the two segment loglik calls
bit for bit.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .events import Trajectory, format_day, parse_day
from .population import MissingParamsError, RegimeParamTable
from .renewal import ExpParams, exp_loglik, fit_exponential, weibull_logpdf

METHOD_CHANGEPOINT = "changepoint"
METHOD_NAIVE = "naive"

ONSET_COLUMNS = ("patient_id", "drug_atc", "onset_date", "margin", "method")


@dataclass(frozen=True)
class DetectionConfig:
    """epsilon: minimum log-likelihood improvement over the null;
    min_prescriptions: fewest events a trajectory needs to be scanned."""

    epsilon: float = 0.05
    min_prescriptions: int = 6

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.min_prescriptions < 2:
            raise ValueError(
                f"min_prescriptions must be >= 2, got {self.min_prescriptions}"
            )


@dataclass(frozen=True)
class ChangePointResult:
    accepted: bool
    c_hat: int | None
    onset_date: int | None
    loglik_at_c: float
    loglik_null: float
    margin: float


@dataclass(frozen=True)
class OnsetRecord:
    """Inferred treated-phenotype onset for one (patient, drug) pair."""

    patient_id: str
    drug_code: str
    onset_date: int
    margin: float
    method: str = METHOD_CHANGEPOINT


def changepoint_loglik(
    trajectory: Trajectory,
    params: RegimeParamTable,
    null_rate: ExpParams,
    c: int,
) -> float:
    """Evaluate the two-regime objective at candidate c (1-based)."""
    n = len(trajectory.intervals)
    if not 1 <= c <= n:
        raise ValueError(f"candidate c must be in 1..{n}, got {c}")
    pre = [iv.tau for iv in trajectory.intervals[: c - 1]]
    chronic_terms = [
        weibull_logpdf(iv.tau, params.lookup(trajectory.drug_code, iv.regime))
        for iv in trajectory.intervals[c - 1 :]
    ]
    return exp_loglik(pre, null_rate) + math.fsum(chronic_terms)


def detect_onset(
    trajectory: Trajectory,
    params: RegimeParamTable,
    config: DetectionConfig = DetectionConfig(),
) -> ChangePointResult:
    """Scan all candidates, take the argmax (ties to the smallest c, the
    earliest onset), and accept iff the margin over the all-null score
    strictly exceeds epsilon. The onset date is the date of the event
    opening the first chronic-scored interval.

    Callers are expected to pre-filter short trajectories; fewer than
    config.min_prescriptions events is an error here.
    """
    if trajectory.n_events < config.min_prescriptions:
        raise ValueError(
            f"trajectory has {trajectory.n_events} events; "
            f"need >= {config.min_prescriptions}"
        )
    taus = trajectory.taus
    n = len(taus)
    null = fit_exponential(taus)
    log_rate = math.log(null.rate)
    loglik_null = exp_loglik(taus, null)

    chronic_terms = [
        weibull_logpdf(iv.tau, params.lookup(trajectory.drug_code, iv.regime))
        for iv in trajectory.intervals
    ]

    best_c = 1
    best_ll = -math.inf
    prefix_tau = 0  # exact: integer days
    for c in range(1, n + 1):
        ll = (c - 1) * log_rate - null.rate * prefix_tau + math.fsum(chronic_terms[c - 1 :])
        if ll > best_ll:
            best_ll = ll
            best_c = c
        prefix_tau += taus[c - 1]

    margin = best_ll - loglik_null
    accepted = margin > config.epsilon
    return ChangePointResult(
        accepted=accepted,
        c_hat=best_c if accepted else None,
        onset_date=trajectory.events[best_c - 1].date if accepted else None,
        loglik_at_c=best_ll,
        loglik_null=loglik_null,
        margin=margin,
    )


@dataclass
class TrajectoryError:
    patient_id: str
    drug_code: str
    message: str


@dataclass
class DetectionBatch:
    """detect_all output: accepted onsets plus a non-fatal error tally."""

    records: list[OnsetRecord] = field(default_factory=list)
    n_input: int = 0
    n_scanned: int = 0
    n_skipped_short: int = 0
    errors: list[TrajectoryError] = field(default_factory=list)


def _detect_chunk(trajectories, params, config):
    records, errors = [], []
    for traj in trajectories:
        try:
            result = detect_onset(traj, params, config)
        except MissingParamsError as exc:
            errors.append(TrajectoryError(traj.patient_id, traj.drug_code, str(exc)))
            continue
        if result.accepted:
            records.append(
                OnsetRecord(
                    patient_id=traj.patient_id,
                    drug_code=traj.drug_code,
                    onset_date=result.onset_date,
                    margin=result.margin,
                    method=METHOD_CHANGEPOINT,
                )
            )
    return records, errors


def detect_all(
    trajectories,
    params: RegimeParamTable,
    config: DetectionConfig = DetectionConfig(),
    threads: int | None = None,
) -> DetectionBatch:
    """Apply the min-prescription filter and detect_onset per trajectory.

    Per-trajectory failures (missing parameters) are collected in the
    batch report instead of aborting. Output records are ordered by
    (patient_id, drug_code) regardless of input order or parallelism.
    """
    batch = DetectionBatch()
    eligible: list[Trajectory] = []
    for traj in trajectories:
        batch.n_input += 1
        if traj.n_events < config.min_prescriptions:
            batch.n_skipped_short += 1
            continue
        eligible.append(traj)
    batch.n_scanned = len(eligible)

    if threads and threads > 1 and len(eligible) > 1:
        chunks = [eligible[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(_detect_chunk, chunks, [params] * threads, [config] * threads)
            )
        for records, errors in results:
            batch.records.extend(records)
            batch.errors.extend(errors)
    else:
        records, errors = _detect_chunk(eligible, params, config)
        batch.records.extend(records)
        batch.errors.extend(errors)

    batch.records.sort(key=lambda r: (r.patient_id, r.drug_code))
    batch.errors.sort(key=lambda e: (e.patient_id, e.drug_code))
    return batch


def write_onsets_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ONSET_COLUMNS)
        for rec in records:
            writer.writerow(
                (
                    rec.patient_id,
                    rec.drug_code,
                    format_day(rec.onset_date),
                    repr(rec.margin),
                    rec.method,
                )
            )


def read_onsets_csv(path) -> list[OnsetRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"onsets file not found: {path}")
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                OnsetRecord(
                    patient_id=row["patient_id"],
                    drug_code=row["drug_atc"],
                    onset_date=parse_day(row["onset_date"]),
                    margin=float(row["margin"]),
                    method=row["method"],
                )
            )
    return records
