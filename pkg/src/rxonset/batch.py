"""Columnar change-point detection for national-scale batches.

Flat-array equivalent of changepoint.detect_all: one pass over all
trajectories at once using per-trajectory segment reductions instead of
per-trajectory Python objects. Scores here accumulate with cumulative
sums, so log-likelihoods can differ from the reference implementation in
the last few ulps; accept/reject decisions and change-point indices
agree on anything that is not an exact floating-point knife edge (the
test suite cross-checks the two engines).

The prescriptions loader in this module is strict: any malformed cell
aborts with a count instead of the row-level error report produced by
events.ingest_prescriptions. Use it for bulk files known to be
machine-written.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import polars as pl

from .changepoint import DetectionConfig, METHOD_CHANGEPOINT, OnsetRecord
from .events import EPOCH_ORDINAL, Regime
from .population import RegimeParamTable

FRAME_COLUMNS = ("patient_id", "drug_atc", "day", "chronic", "renewable")

_SENTINEL_POS = np.int64(1) << 40


class DataFormatError(ValueError):
    """Bulk input file failed strict validation."""


def load_prescriptions_frame(path) -> pl.DataFrame:
    """Read a prescriptions CSV into a frame with integer-day dates."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prescriptions file not found: {path}")
    df = pl.read_csv(
        path,
        schema_overrides={
            "patient_id": pl.Utf8,
            "drug_atc": pl.Utf8,
            "date": pl.Utf8,
            "chronic": pl.Int8,
            "renewable": pl.Int8,
        },
    )
    missing = [c for c in ("patient_id", "drug_atc", "date", "chronic", "renewable") if c not in df.columns]
    if missing:
        raise DataFormatError(f"{path}: missing columns {missing}")
    df = df.with_columns(
        pl.col("date").str.to_date(strict=False).cast(pl.Int32).alias("day"),
        pl.col("chronic").is_in([0, 1]).alias("_chronic_ok"),
        pl.col("renewable").is_in([0, 1]).alias("_renew_ok"),
    )
    n_bad = df.select(
        (
            pl.col("day").is_null()
            | pl.col("patient_id").is_null()
            | pl.col("drug_atc").is_null()
            | ~pl.col("_chronic_ok")
            | ~pl.col("_renew_ok")
        ).sum()
    ).item()
    if n_bad:
        raise DataFormatError(f"{path}: {n_bad} malformed rows (strict bulk loader)")
    return df.select(
        "patient_id",
        "drug_atc",
        "day",
        pl.col("chronic").cast(pl.Boolean),
        pl.col("renewable").cast(pl.Boolean),
    )


def frame_from_events(events) -> pl.DataFrame:
    """Build the columnar layout from PrescriptionEvent records."""
    return pl.DataFrame(
        {
            "patient_id": [e.patient_id for e in events],
            "drug_atc": [e.drug_code for e in events],
            "day": pl.Series([e.date for e in events], dtype=pl.Int32),
            "chronic": [e.chronic_label for e in events],
            "renewable": [e.renewable for e in events],
        }
    )


@dataclass
class BatchStats:
    n_pairs: int = 0
    n_skipped_short: int = 0
    n_missing_params: int = 0
    n_scanned: int = 0
    n_accepted: int = 0
    missing_keys: list[str] | None = None


def _collapse_same_day(df: pl.DataFrame) -> pl.DataFrame:
    """Sort by (patient, drug, day) and OR-merge same-day duplicates."""
    df = df.sort(("patient_id", "drug_atc", "day"))
    dup = df.select(
        (
            (pl.col("patient_id") == pl.col("patient_id").shift(1))
            & (pl.col("drug_atc") == pl.col("drug_atc").shift(1))
            & (pl.col("day") == pl.col("day").shift(1))
        )
        .fill_null(False)
        .alias("dup")
    )["dup"].to_numpy()
    if not dup.any():
        return df
    run_starts = np.flatnonzero(~dup)
    chronic = np.maximum.reduceat(df["chronic"].to_numpy().astype(np.int8), run_starts)
    renew = np.maximum.reduceat(df["renewable"].to_numpy().astype(np.int8), run_starts)
    out = df.filter(pl.Series(~dup))
    return out.with_columns(
        pl.Series("chronic", chronic.astype(bool)),
        pl.Series("renewable", renew.astype(bool)),
    )


def _param_arrays(table: RegimeParamTable):
    """Vector lookup tables: 'drug|regime' -> row of (shape, scale)."""
    keys, shapes, scales = [], [], []
    for (drug, regime), entry in sorted(table.entries.items()):
        keys.append(f"{drug}|{regime.value}")
        shapes.append(entry.params.shape)
        scales.append(entry.params.scale)
    mapping = {k: i for i, k in enumerate(keys)}
    return mapping, np.asarray(shapes), np.asarray(scales)


def detect_frame(
    df: pl.DataFrame,
    table: RegimeParamTable,
    config: DetectionConfig = DetectionConfig(),
) -> tuple[pl.DataFrame, BatchStats]:
    """Run the change-point scan over every (patient, drug) pair in df.

    Returns (onsets frame sorted by patient/drug, stats). Pairs under the
    prescription minimum are skipped; pairs whose (drug, regime) has no
    table entry are tallied as errors, mirroring detect_all.
    """
    stats = BatchStats(missing_keys=[])
    empty = pl.DataFrame(
        {
            "patient_id": pl.Series([], dtype=pl.Utf8),
            "drug_atc": pl.Series([], dtype=pl.Utf8),
            "onset_date": pl.Series([], dtype=pl.Date),
            "margin": pl.Series([], dtype=pl.Float64),
            "method": pl.Series([], dtype=pl.Utf8),
        }
    )
    if df.height == 0:
        return empty, stats
    df = _collapse_same_day(df)

    day = df["day"].to_numpy().astype(np.int64)
    first_ev = (
        df.select(
            (
                (pl.col("patient_id") != pl.col("patient_id").shift(1))
                | (pl.col("drug_atc") != pl.col("drug_atc").shift(1))
            )
            .fill_null(True)
            .alias("f")
        )["f"]
        .to_numpy()
    )
    ev_starts = np.flatnonzero(first_ev)
    n_pairs = ev_starts.size
    ev_counts = np.diff(np.append(ev_starts, day.size))
    stats.n_pairs = n_pairs

    # param row per event under that event's own regime (used when the
    # event opens an interval)
    mapping, shape_rows, scale_rows = _param_arrays(table)
    code = (
        df.select(
            (
                pl.col("drug_atc")
                + pl.when(pl.col("renewable"))
                .then(pl.lit("|" + Regime.RENEWABLE.value))
                .otherwise(pl.lit("|" + Regime.NON_RENEWABLE.value))
            )
            .replace_strict(mapping, default=-1, return_dtype=pl.Int64)
            .alias("code")
        )["code"]
        .to_numpy()
    )

    long_enough = ev_counts >= config.min_prescriptions
    stats.n_skipped_short = int(n_pairs - long_enough.sum())

    # interval level: event i>0 within a pair closes an interval opened by
    # event i-1, whose regime picks the parameters
    closes = ~first_ev
    iv_pair = (np.cumsum(first_ev) - 1)[closes]
    iv_tau = (day[1:] - day[:-1])[closes[1:]].astype(np.float64)
    iv_code = code[:-1][closes[1:]]

    pair_missing = np.zeros(n_pairs, dtype=bool)
    bad = iv_code < 0
    if bad.any():
        np.logical_or.at(pair_missing, iv_pair[bad], True)
        bad_openers = (np.flatnonzero(closes) - 1)[bad]
        sample_keys = set()
        for i in bad_openers[:50]:
            regime = Regime.RENEWABLE if df["renewable"][int(i)] else Regime.NON_RENEWABLE
            sample_keys.add(f"{df['drug_atc'][int(i)]}|{regime.value}")
        stats.missing_keys = sorted(sample_keys)
    scan_pair = long_enough & ~pair_missing
    stats.n_missing_params = int((long_enough & pair_missing).sum())
    stats.n_scanned = int(scan_pair.sum())
    if stats.n_scanned == 0:
        return empty, stats

    iv_keep = scan_pair[iv_pair]
    tau = iv_tau[iv_keep]
    kcode = iv_code[iv_keep]
    lens = (ev_counts - 1)[scan_pair]
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    m = tau.size

    n = lens.astype(np.float64)
    sum_tau = np.add.reduceat(tau, starts)
    rate = n / sum_tau
    log_rate = np.log(rate)
    lnull = n * log_rate - rate * sum_tau

    k = shape_rows[kcode]
    lam = scale_rows[kcode]
    log_ratio = np.log(tau) - np.log(lam)
    with np.errstate(over="ignore"):
        b = np.log(k / lam) + (k - 1.0) * log_ratio - np.exp(k * log_ratio)
    np.clip(b, -1e290, None, out=b)

    pos = np.arange(m, dtype=np.int64) - np.repeat(starts, lens)
    ctau = np.cumsum(tau)
    prefix_tau = ctau - tau - np.repeat(ctau[starts] - tau[starts], lens)
    cb = np.cumsum(b)
    prefix_b = cb - b - np.repeat(cb[starts] - b[starts], lens)
    suffix_b = np.repeat(np.add.reduceat(b, starts), lens) - prefix_b
    score = pos * np.repeat(log_rate, lens) - np.repeat(rate, lens) * prefix_tau + suffix_b

    best = np.maximum.reduceat(score, starts)
    at_best = score == np.repeat(best, lens)
    cand = np.where(at_best, pos, _SENTINEL_POS)
    c0 = np.minimum.reduceat(cand, starts)  # 0-based c_hat - 1, smallest on ties
    margin = best - lnull
    accepted = margin > config.epsilon
    stats.n_accepted = int(accepted.sum())

    onset_ev = ev_starts[scan_pair][accepted] + c0[accepted]
    idx = pl.Series(onset_ev)
    out = df.select(
        pl.col("patient_id").gather(idx),
        pl.col("drug_atc").gather(idx),
    ).with_columns(
        pl.Series("onset_date", day[onset_ev].astype("datetime64[D]")),
        pl.Series("margin", margin[accepted]),
        pl.lit(METHOD_CHANGEPOINT).alias("method"),
    )
    return out.sort(("patient_id", "drug_atc")), stats


def onsets_frame_to_records(frame: pl.DataFrame) -> list[OnsetRecord]:
    return [
        OnsetRecord(
            patient_id=row["patient_id"],
            drug_code=row["drug_atc"],
            onset_date=row["onset_date"].toordinal() - EPOCH_ORDINAL,
            margin=row["margin"],
            method=row["method"],
        )
        for row in frame.iter_rows(named=True)
    ]


def write_onsets_frame(path, frame: pl.DataFrame) -> None:
    frame.write_csv(path)
