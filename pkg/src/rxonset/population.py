"""Regime-stratified per-drug Weibull parameter estimation.

Intervals are pooled across training patients per (drug, regime), run
through the label filter, and fitted with the profile MLE. Entries with
too little support fall back, in order, to (1) a regime-agnostic pooled
fit for the drug, then (2) global per-regime defaults motivated by the
observed clustering of refill scales (roughly one year for renewable
prescriptions, roughly three months for non-renewable ones). A finished
table is frozen: estimation happens once on training data and the table
is then applied as-is.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .events import Regime
from .renewal import FitError, WeibullParams, fit_weibull

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_MIN_INTERVALS = 100
FALLBACK_SHAPE = 1.5
FALLBACK_SCALE = {Regime.RENEWABLE: 350.0, Regime.NON_RENEWABLE: 100.0}


class SchemaVersionError(ValueError):
    """Parameter file written by an incompatible schema version."""


class MissingParamsError(ValueError):
    """No parameter entry for a (drug, regime) seen at inference time."""


class LabelFilter(str, Enum):
    """Which intervals enter estimation pools.

    CHRONIC_ONLY keeps intervals whose opening prescription carries the
    administrative chronic label; those labels are noisy evidence of
    disease state but effectively select renewal-type intervals. ALL is
    retained for the label-robustness comparison.
    """

    CHRONIC_ONLY = "chronic_only"
    ALL = "all"


@dataclass(frozen=True)
class ParamEntry:
    params: WeibullParams
    n_intervals: int
    fallback: bool


@dataclass
class RegimeParamTable:
    """Frozen map (drug, regime) -> fitted Weibull parameters."""

    entries: dict[tuple[str, Regime], ParamEntry] = field(default_factory=dict)
    label_filter: LabelFilter = LabelFilter.CHRONIC_ONLY
    min_intervals: int = DEFAULT_MIN_INTERVALS
    train_patients: tuple[str, ...] | None = None

    def lookup(self, drug_code: str, regime: Regime) -> WeibullParams:
        entry = self.entries.get((drug_code, regime))
        if entry is None:
            raise MissingParamsError(f"no parameters for ({drug_code}, {regime.value})")
        return entry.params

    def get_entry(self, drug_code: str, regime: Regime) -> ParamEntry | None:
        return self.entries.get((drug_code, regime))

    @property
    def drugs(self) -> list[str]:
        return sorted({drug for drug, _ in self.entries})


def _pool_intervals(trajectories, label_filter: LabelFilter):
    """Pool tau lists per (drug, regime) and per drug across all patients.

    Pools are sorted so the fit is bit-identical no matter how the
    trajectories were ordered (float accumulation is order-sensitive).
    """
    by_regime: dict[tuple[str, Regime], list[int]] = defaultdict(list)
    by_drug: dict[str, list[int]] = defaultdict(list)
    for traj in trajectories:
        for iv in traj.intervals:
            if label_filter is LabelFilter.CHRONIC_ONLY and not iv.chronic_label:
                continue
            by_regime[(traj.drug_code, iv.regime)].append(iv.tau)
            by_drug[traj.drug_code].append(iv.tau)
    for pool in by_regime.values():
        pool.sort()
    for pool in by_drug.values():
        pool.sort()
    return by_regime, by_drug


def _try_fit(taus) -> WeibullParams | None:
    try:
        return fit_weibull(taus)
    except FitError:
        return None


def estimate_params(
    trajectories,
    label_filter: LabelFilter = LabelFilter.CHRONIC_ONLY,
    min_intervals: int = DEFAULT_MIN_INTERVALS,
    train_patients=None,
) -> RegimeParamTable:
    """Fit the population table from training trajectories.

    Every drug seen in the pools gets an entry for both regimes so that
    inference never stalls on a regime unseen in training; entries whose
    own pool is under min_intervals (or whose fit degenerates) are
    fallback-flagged and never fatal.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("cannot estimate parameters from an empty training set")
    by_regime, by_drug = _pool_intervals(trajectories, label_filter)

    entries: dict[tuple[str, Regime], ParamEntry] = {}
    for drug in sorted(by_drug):
        drug_pool = by_drug[drug]
        drug_fit = _try_fit(drug_pool) if len(drug_pool) >= min_intervals else None
        for regime in (Regime.RENEWABLE, Regime.NON_RENEWABLE):
            taus = by_regime.get((drug, regime), [])
            params = None
            fallback = False
            if len(taus) >= min_intervals:
                params = _try_fit(taus)
            if params is None:
                fallback = True
                params = drug_fit
            if params is None:
                params = WeibullParams(shape=FALLBACK_SHAPE, scale=FALLBACK_SCALE[regime])
            entries[(drug, regime)] = ParamEntry(
                params=params, n_intervals=len(taus), fallback=fallback
            )

    return RegimeParamTable(
        entries=entries,
        label_filter=label_filter,
        min_intervals=min_intervals,
        train_patients=tuple(sorted(train_patients)) if train_patients else None,
    )


@dataclass(frozen=True)
class LabelFilterComparison:
    """Per-drug shape estimates under ALL vs CHRONIC_ONLY pooling."""

    drugs: tuple[str, ...]
    shape_all: tuple[float, ...]
    shape_chronic: tuple[float, ...]
    pearson_r: float
    slope: float
    intercept: float


def compare_label_filters(
    trajectories, min_intervals: int = DEFAULT_MIN_INTERVALS
) -> LabelFilterComparison:
    """Robustness check: per-drug shape fitted from all intervals vs only
    chronically labeled ones, with Pearson r and the regression of the
    chronic-only estimate on the all-interval estimate.

    Only drugs supporting a direct (regime-agnostic) fit under both
    filters enter; fewer than 3 such drugs leaves the statistics
    undefined.
    """
    trajectories = list(trajectories)
    _, all_pool = _pool_intervals(trajectories, LabelFilter.ALL)
    _, chronic_pool = _pool_intervals(trajectories, LabelFilter.CHRONIC_ONLY)

    drugs, k_all, k_chronic = [], [], []
    for drug in sorted(all_pool):
        ta, tc = all_pool[drug], chronic_pool.get(drug, [])
        if len(ta) < min_intervals or len(tc) < min_intervals:
            continue
        fa, fc = _try_fit(ta), _try_fit(tc)
        if fa is None or fc is None:
            continue
        drugs.append(drug)
        k_all.append(fa.shape)
        k_chronic.append(fc.shape)

    if len(drugs) < 3:
        raise ValueError(
            f"label-filter comparison needs >= 3 drugs with both fits, got {len(drugs)}"
        )
    r, _ = sps.pearsonr(k_all, k_chronic)
    reg = sps.linregress(k_all, k_chronic)
    return LabelFilterComparison(
        drugs=tuple(drugs),
        shape_all=tuple(k_all),
        shape_chronic=tuple(k_chronic),
        pearson_r=float(r),
        slope=float(reg.slope),
        intercept=float(reg.intercept),
    )


def save_params(table: RegimeParamTable, path) -> None:
    """Persist as JSON keyed by ``drug|regime``; floats round-trip exactly."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "label_filter": table.label_filter.value,
        "min_intervals": table.min_intervals,
        "train_patients": list(table.train_patients) if table.train_patients else None,
        "entries": {
            f"{drug}|{regime.value}": {
                "k": entry.params.shape,
                "lambda": entry.params.scale,
                "n_intervals": entry.n_intervals,
                "fallback": entry.fallback,
            }
            for (drug, regime), entry in sorted(table.entries.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_params(path) -> RegimeParamTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parameter file not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"parameter file schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    entries = {}
    for key, rec in payload["entries"].items():
        drug, _, regime = key.rpartition("|")
        entries[(drug, Regime(regime))] = ParamEntry(
            params=WeibullParams(shape=rec["k"], scale=rec["lambda"]),
            n_intervals=rec["n_intervals"],
            fallback=rec["fallback"],
        )
    train = payload.get("train_patients")
    return RegimeParamTable(
        entries=entries,
        label_filter=LabelFilter(payload["label_filter"]),
        min_intervals=payload["min_intervals"],
        train_patients=tuple(train) if train else None,
    )
