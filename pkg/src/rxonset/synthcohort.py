"""Synthetic prescription/diagnosis cohorts with known ground truth.

Stands in for inaccessible national claims data. Each patient draws
disease afflictions by prevalence; afflicted (patient, drug) streams
switch from sporadic background prescribing (Poisson) to sustained
Weibull renewals at the true onset, with configurable dispensing-regime
switching, label noise, left censoring of everything before the study
window, and a per-year diagnosis-recording adoption ramp. Ground truth
keeps the uncensored onsets.

Generation is per-patient deterministic: every patient gets an
independent child RNG stream derived from the scenario seed, so output
does not depend on execution order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .events import (
    DiagnosisEvent,
    PrescriptionEvent,
    format_day,
    parse_day,
    year_of_day,
)


def day(iso: str) -> int:
    """Convenience: ISO date -> integer day, for scenario construction."""
    return parse_day(iso)


@dataclass(frozen=True)
class DrugProfile:
    code: str
    shape_nonrenewable: float = 2.5
    scale_nonrenewable: float = 100.0
    shape_renewable: float = 3.0
    scale_renewable: float = 350.0
    background_rate: float = 0.0  # sporadic prescriptions per day
    chronic_mislabel_prob: float = 0.0  # sporadic event labeled chronic
    acute_mislabel_prob: float = 0.0  # sustained event labeled acute

    def __post_init__(self):
        for name in ("chronic_mislabel_prob", "acute_mislabel_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.background_rate < 0:
            raise ValueError("background_rate must be >= 0")


@dataclass(frozen=True)
class DiseaseProfile:
    icd: str
    drugs: tuple[str, ...]
    prevalence: float
    onset_low: int  # true onset uniform over [onset_low, onset_high]
    onset_high: int  # may predate the study window (left censoring)
    diag_delay_mean: float = 30.0
    diag_delay_sd: float = 30.0
    adoption_ramp: tuple[tuple[int, float], ...] = ((2016, 1.0),)  # (year, prob)
    drugs_per_patient: int = 1

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError(f"prevalence must be in [0, 1], got {self.prevalence}")
        if self.onset_low > self.onset_high:
            raise ValueError("onset_low must be <= onset_high")
        if not 1 <= self.drugs_per_patient <= len(self.drugs):
            raise ValueError("drugs_per_patient must be in 1..len(drugs)")
        for _, p in self.adoption_ramp:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"adoption probability must be in [0, 1], got {p}")

    def adoption_prob(self, year: int) -> float:
        """Piecewise-constant per-calendar-year recording probability."""
        prob = self.adoption_ramp[0][1]
        for ramp_year, ramp_prob in self.adoption_ramp:
            if year >= ramp_year:
                prob = ramp_prob
        return prob


@dataclass(frozen=True)
class ScenarioConfig:
    n_patients: int
    study_start: int
    study_end: int
    drugs: tuple[DrugProfile, ...]
    diseases: tuple[DiseaseProfile, ...]
    switch_after_events: int = 10**9  # sustained events before non-renewable -> renewable
    catchup_recording: bool = True  # pre-window diagnoses recorded early in-window
    catchup_days: int = 365
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.study_start >= self.study_end:
            raise ValueError("study_start must precede study_end")
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        codes = {d.code for d in self.drugs}
        if len(codes) != len(self.drugs):
            raise ValueError("duplicate drug codes in scenario")
        for disease in self.diseases:
            unknown = set(disease.drugs) - codes
            if unknown:
                raise ValueError(f"disease {disease.icd} references unknown drugs {unknown}")


@dataclass
class GroundTruth:
    """Uncensored truth: onsets per (patient, icd) and (patient, drug),
    and the index of the first surviving sustained event within each
    pair's emitted event sequence (None if censoring removed them all).
    """

    disease_onsets: dict[tuple[str, str], int] = field(default_factory=dict)
    drug_onsets: dict[tuple[str, str], int] = field(default_factory=dict)
    transition_index: dict[tuple[str, str], int | None] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("patient_id", "icd", "true_onset_date"))
            for (pid, icd), onset in sorted(self.disease_onsets.items()):
                writer.writerow((pid, icd, format_day(onset)))


def sample_weibull(shape: float, scale: float, rng, size=None):
    """Inverse-CDF Weibull draw(s): scale * (-ln U)^(1/shape) with U the
    survival uniform, rounded to whole days with a floor of one day."""
    u = 1.0 - (rng.random() if size is None else rng.random(size))
    tau = scale * (-np.log(u)) ** (1.0 / shape)
    if size is None:
        return max(1, int(round(tau)))
    return np.maximum(1, np.rint(tau)).astype(np.int64)


def _background_days(rng, rate: float, start: int, stop: int) -> np.ndarray:
    """Homogeneous Poisson event days on [start, stop)."""
    span = stop - start
    if rate <= 0 or span <= 0:
        return np.empty(0, dtype=np.int64)
    n = rng.poisson(rate * span)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    return start + np.floor(rng.random(n) * span).astype(np.int64)


def simulate(cfg: ScenarioConfig):
    """Generate (prescriptions, diagnoses, ground_truth) for a scenario."""
    prescriptions: list[PrescriptionEvent] = []
    diagnoses: list[DiagnosisEvent] = []
    truth = GroundTruth()

    width = max(7, len(str(cfg.n_patients)))
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_patients)
    for i in range(cfg.n_patients):
        rng = np.random.Generator(np.random.PCG64(streams[i]))
        pid = f"p{i:0{width}d}"

        drug_onsets: dict[str, int] = {}
        afflictions = []
        for disease in cfg.diseases:
            if rng.random() >= disease.prevalence:
                continue
            onset = int(rng.integers(disease.onset_low, disease.onset_high + 1))
            if disease.drugs_per_patient == len(disease.drugs):
                chosen = disease.drugs
            else:
                picks = rng.choice(len(disease.drugs), size=disease.drugs_per_patient, replace=False)
                chosen = tuple(disease.drugs[j] for j in sorted(picks))
            afflictions.append((disease, onset))
            truth.disease_onsets[(pid, disease.icd)] = onset
            for code in chosen:
                if code not in drug_onsets or onset < drug_onsets[code]:
                    drug_onsets[code] = onset

        for profile in cfg.drugs:
            onset = drug_onsets.get(profile.code)
            bg_stop = min(onset, cfg.study_end) if onset is not None else cfg.study_end
            raw: list[tuple[int, bool, bool]] = []
            for bg_day in _background_days(rng, profile.background_rate, cfg.study_start, bg_stop):
                chronic = bool(rng.random() < profile.chronic_mislabel_prob)
                raw.append((int(bg_day), chronic, False))
            if onset is not None:
                t, j = onset, 0
                while t <= cfg.study_end:
                    renewable = j >= cfg.switch_after_events
                    chronic = not rng.random() < profile.acute_mislabel_prob
                    raw.append((t, chronic, renewable))
                    if renewable:
                        tau = sample_weibull(profile.shape_renewable, profile.scale_renewable, rng)
                    else:
                        tau = sample_weibull(
                            profile.shape_nonrenewable, profile.scale_nonrenewable, rng
                        )
                    t += tau
                    j += 1
            kept = [r for r in raw if cfg.study_start <= r[0] <= cfg.study_end]
            if onset is not None:
                truth.drug_onsets[(pid, profile.code)] = onset
                days_kept = sorted({r[0] for r in kept})
                idx = next((ix for ix, d in enumerate(days_kept) if d >= onset), None)
                truth.transition_index[(pid, profile.code)] = idx
            for event_day, chronic, renewable in kept:
                prescriptions.append(
                    PrescriptionEvent(
                        patient_id=pid,
                        drug_code=profile.code,
                        date=event_day,
                        chronic_label=chronic,
                        renewable=renewable,
                    )
                )

        for disease, onset in afflictions:
            delay = int(round(rng.normal(disease.diag_delay_mean, disease.diag_delay_sd)))
            recorded = onset + delay
            if recorded < cfg.study_start and cfg.catchup_recording:
                recorded = cfg.study_start + int(rng.random() * cfg.catchup_days)
            if not cfg.study_start <= recorded <= cfg.study_end:
                continue
            if rng.random() < disease.adoption_prob(year_of_day(recorded)):
                diagnoses.append(DiagnosisEvent(patient_id=pid, icd_code=disease.icd, date=recorded))

    return prescriptions, diagnoses, truth


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    drugs = tuple(DrugProfile(**d) for d in raw.pop("drugs"))
    diseases = []
    for d in raw.pop("diseases"):
        d["drugs"] = tuple(d["drugs"])
        d["adoption_ramp"] = tuple((int(y), float(p)) for y, p in d["adoption_ramp"])
        diseases.append(DiseaseProfile(**d))
    return ScenarioConfig(drugs=drugs, diseases=tuple(diseases), **raw)


# --- presets -----------------------------------------------------------------

STUDY_START = day("2016-01-01")
STUDY_END = day("2022-01-01")


def demo_scenario(n_patients: int = 10_000, seed: int = 7) -> ScenarioConfig:
    """Three diseases with 12-drug dictionaries, mixed regimes, a rising
    diagnosis-adoption ramp, and mild label noise; the pipeline's default
    end-to-end cohort."""
    ramp = ((2016, 0.55), (2017, 0.7), (2018, 0.85), (2019, 0.95), (2020, 1.0))
    diseases = []
    drugs = []
    specs = [
        ("E11", "A10B", 2.6, 90.0, 0.22, 300, 1400),
        ("I10", "C09A", 2.2, 110.0, 0.20, 200, 1600),
        ("F41", "N06A", 1.9, 130.0, 0.12, 400, 1500),
    ]
    for icd, stem, shape, scale, prevalence, lo, hi in specs:
        codes = tuple(f"{stem}{i:02d}" for i in range(1, 13))
        for code in codes:
            drugs.append(
                DrugProfile(
                    code=code,
                    shape_nonrenewable=shape,
                    scale_nonrenewable=scale,
                    shape_renewable=shape + 0.5,
                    scale_renewable=350.0,
                    background_rate=1 / 3000,
                    acute_mislabel_prob=0.02,
                )
            )
        diseases.append(
            DiseaseProfile(
                icd=icd,
                drugs=codes,
                prevalence=prevalence,
                onset_low=STUDY_START + lo,
                onset_high=STUDY_START + hi,
                diag_delay_mean=25.0,
                diag_delay_sd=40.0,
                adoption_ramp=ramp,
                drugs_per_patient=2,
            )
        )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=tuple(drugs),
        diseases=tuple(diseases),
        switch_after_events=5,
        seed=seed,
        name="demo",
    )


def dense_chronic_scenario(n_patients: int = 10_000, seed: int = 11) -> ScenarioConfig:
    """One dense chronic disease, non-renewable refills (k=2.5, scale=100),
    sporadic background with 15% spurious chronic labels."""
    drug = DrugProfile(
        code="A10BA02",
        shape_nonrenewable=2.5,
        scale_nonrenewable=100.0,
        background_rate=1 / 200,
        chronic_mislabel_prob=0.15,
    )
    disease = DiseaseProfile(
        icd="E11",
        drugs=(drug.code,),
        prevalence=0.8,
        onset_low=STUDY_START + 700,
        onset_high=STUDY_START + 1400,
        diag_delay_mean=30.0,
        diag_delay_sd=30.0,
    )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=(drug,),
        diseases=(disease,),
        seed=seed,
        name="dense_chronic",
    )


def left_censored_scenario(n_patients: int = 10_000, seed: int = 13) -> ScenarioConfig:
    """30% of true onsets predate the study window; ongoing therapy is
    visible only from the window start."""
    drug = DrugProfile(
        code="C09AA05",
        shape_nonrenewable=2.5,
        scale_nonrenewable=100.0,
        background_rate=1 / 150,
        chronic_mislabel_prob=0.15,
    )
    disease = DiseaseProfile(
        icd="I10",
        drugs=(drug.code,),
        prevalence=0.5,
        onset_low=STUDY_START - 900,
        onset_high=STUDY_START + 2100,
        diag_delay_mean=30.0,
        diag_delay_sd=30.0,
    )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=(drug,),
        diseases=(disease,),
        seed=seed,
        name="left_censored",
    )


COVID_CUTOVER = day("2020-03-01")


def covid_analog_scenario(n_patients: int = 10_000, seed: int = 17) -> ScenarioConfig:
    """Disease that exists only after a cutover date; its drugs see
    occasional sporadic use (with spurious chronic labels) from the start
    of the window, so date-blind triggering back-dates onsets."""
    codes = tuple(f"J05AB{i:02d}" for i in range(1, 13))
    drugs = tuple(
        DrugProfile(
            code=code,
            shape_nonrenewable=3.0,
            scale_nonrenewable=60.0,
            background_rate=1 / 2500,
            chronic_mislabel_prob=0.15,
        )
        for code in codes
    )
    disease = DiseaseProfile(
        icd="U07",
        drugs=codes,
        prevalence=0.4,
        onset_low=COVID_CUTOVER,
        onset_high=STUDY_END - 450,
        diag_delay_mean=20.0,
        diag_delay_sd=15.0,
        drugs_per_patient=1,
    )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=drugs,
        diseases=(disease,),
        seed=seed,
        name="covid_analog",
    )


def density_sweep_scenario(n_patients: int = 10_000, seed: int = 19) -> ScenarioConfig:
    """Five diseases whose refill scales span sparse to dense prescribing."""
    scales = {"D01": 600.0, "D02": 280.0, "D03": 140.0, "D04": 80.0, "D05": 55.0}
    drugs = []
    diseases = []
    for i, (icd, scale) in enumerate(scales.items(), start=1):
        code = f"X{i:02d}AA01"
        drugs.append(
            DrugProfile(
                code=code,
                shape_nonrenewable=2.5,
                scale_nonrenewable=scale,
                background_rate=1 / 2000,
                chronic_mislabel_prob=0.05,
            )
        )
        diseases.append(
            DiseaseProfile(
                icd=icd,
                drugs=(code,),
                prevalence=0.18,
                onset_low=STUDY_START - 300,
                onset_high=STUDY_START + 1300,
                diag_delay_mean=30.0,
                diag_delay_sd=30.0,
            )
        )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=tuple(drugs),
        diseases=tuple(diseases),
        seed=seed,
        name="density_sweep",
    )


def label_noise_scenario(
    n_drugs: int = 30,
    noise: float = 0.2,
    n_patients: int = 2_500,
    seed: int = 23,
) -> ScenarioConfig:
    """Many drugs with varied true regularity and symmetric label noise,
    for the all-vs-chronic estimation robustness comparison."""
    drugs = []
    diseases = []
    for i in range(n_drugs):
        frac = i / max(1, n_drugs - 1)
        code = f"Z{i:02d}AA01"
        drugs.append(
            DrugProfile(
                code=code,
                shape_nonrenewable=1.3 + 2.2 * frac,
                scale_nonrenewable=80.0 + 280.0 * ((i * 7) % n_drugs) / n_drugs,
                background_rate=1 / 1500,
                chronic_mislabel_prob=noise,
                acute_mislabel_prob=noise,
            )
        )
        diseases.append(
            DiseaseProfile(
                icd=f"K{i:02d}",
                drugs=(code,),
                prevalence=0.25,
                onset_low=STUDY_START + 100,
                onset_high=STUDY_START + 1200,
            )
        )
    return ScenarioConfig(
        n_patients=n_patients,
        study_start=STUDY_START,
        study_end=STUDY_END,
        drugs=tuple(drugs),
        diseases=tuple(diseases),
        seed=seed,
        name="label_noise",
    )


PRESETS = {
    "demo": demo_scenario,
    "dense_chronic": dense_chronic_scenario,
    "left_censored": left_censored_scenario,
    "covid_analog": covid_analog_scenario,
    "density_sweep": density_sweep_scenario,
    "label_noise": label_noise_scenario,
}
