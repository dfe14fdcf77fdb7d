"""Train-freeze-apply-evaluate orchestration.

Stage order: simulate (optional) -> split -> fit params on the training
cohort -> detect on training patients -> build the drug-disease
dictionary from training onsets -> detect on held-out test patients ->
disease-level inference (change-point and naive) on test patients ->
evaluation metrics.

Model components (parameter table, dictionary) are derived strictly from
the training cohort, frozen, and applied to the test cohort. The leakage
guard aborts any apply stage whose scored patients overlap the patients
a frozen artifact was built from. Every stage records a config
fingerprint in the out-dir manifest so reruns are attributable; reruns
with identical inputs and seed are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import polars as pl

from . import batch, evalharness, phenotype, population
from .changepoint import (
    DetectionConfig,
    METHOD_CHANGEPOINT,
    METHOD_NAIVE,
    detect_all,
    read_onsets_csv,
    write_onsets_csv,
)
from .events import (
    build_trajectories,
    ingest_diagnoses,
    ingest_prescriptions,
    parse_day,
    split_patients,
    write_diagnoses,
)
from .phenotype import DictionaryConfig
from .synthcohort import PRESETS, load_scenario, simulate

logger = logging.getLogger(__name__)


class LeakageError(ValueError):
    """A frozen artifact is being applied to patients it was built from."""


class MissingInputError(FileNotFoundError):
    """A stage dependency has not been produced yet."""


def _require(path, hint: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"missing input {path}; {hint}")
    return path


@dataclass
class PipelineConfig:
    prescriptions: str = ""
    diagnoses: str = ""
    out_dir: str = "."
    params_path: str | None = None
    dict_path: str | None = None
    train_fraction: float = 0.42
    seed: int = 0
    epsilon: float = 0.05
    min_prescriptions: int = 6
    label_filter: str = population.LabelFilter.CHRONIC_ONLY.value
    min_intervals: int = population.DEFAULT_MIN_INTERVALS
    window_before: int = 90
    window_after: int = 365
    min_support: int = 25
    min_alignment: float = 0.05
    max_drugs: int = 30
    min_drugs: int = 10
    dedup_per_onset: bool = False
    deltas: tuple = evalharness.DEFAULT_DELTAS
    threads: int | None = None
    engine: str = "columnar"  # or "reference"
    leakage_guard: bool = True
    cutover: str | None = None  # ISO date for pre-cutover fractions
    cutover_icd: str | None = None

    def __post_init__(self):
        if self.engine not in ("columnar", "reference"):
            raise ValueError(f"engine must be columnar or reference, got {self.engine!r}")

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def path_params(self) -> Path:
        return Path(self.params_path) if self.params_path else self.out / "params.json"

    def path_dict(self) -> Path:
        return Path(self.dict_path) if self.dict_path else self.out / "dictionary.json"

    def detection_config(self) -> DetectionConfig:
        return DetectionConfig(epsilon=self.epsilon, min_prescriptions=self.min_prescriptions)

    def dictionary_config(self) -> DictionaryConfig:
        return DictionaryConfig(
            window_before=self.window_before,
            window_after=self.window_after,
            min_support=self.min_support,
            min_alignment=self.min_alignment,
            max_drugs=self.max_drugs,
            min_drugs=self.min_drugs,
            dedup_per_onset=self.dedup_per_onset,
        )

    def fingerprint(self) -> str:
        """Hash of the semantic configuration (thresholds, seeds, engine);
        file locations are recorded in the manifest, not the fingerprint,
        so identical runs in different directories stay byte-identical."""
        payload = asdict(self)
        for volatile in ("prescriptions", "diagnoses", "out_dir", "params_path", "dict_path"):
            payload.pop(volatile, None)
        canon = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _update_manifest(cfg: PipelineConfig, stage: str, inputs, outputs) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    manifest_path = cfg.out / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    manifest.setdefault("stages", {})[stage] = {
        "fingerprint": cfg.fingerprint(),
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
    }
    manifest["config"] = asdict(cfg)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _stamp_json(path, fingerprint: str) -> None:
    with open(path) as fh:
        payload = json.load(fh)
    payload["fingerprint"] = fingerprint
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_patient_file(path) -> set[str]:
    with open(path) as fh:
        return {line.strip() for line in fh if line.strip()}


def _write_patient_file(path, patients) -> None:
    with open(path, "w") as fh:
        for pid in sorted(patients):
            fh.write(pid + "\n")


def resolve_scenario(name_or_path: str, n_patients: int | None = None, seed: int | None = None):
    if name_or_path in PRESETS:
        kwargs = {}
        if n_patients is not None:
            kwargs["n_patients"] = n_patients
        if seed is not None:
            kwargs["seed"] = seed
        return PRESETS[name_or_path](**kwargs)
    return load_scenario(_require(name_or_path, "pass a preset name or a scenario JSON file"))


def cmd_simulate(scenario, out_dir) -> dict:
    """Write prescriptions.csv, diagnoses.csv, ground_truth.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prescriptions, diagnoses, truth = simulate(scenario)
    rx_path, dx_path, gt_path = (
        out / "prescriptions.csv",
        out / "diagnoses.csv",
        out / "ground_truth.csv",
    )
    frame = batch.frame_from_events(prescriptions).sort(("patient_id", "drug_atc", "day"))
    frame.with_columns(
        pl.col("day").cast(pl.Date).dt.to_string().alias("date"),
        pl.col("chronic").cast(pl.Int8),
        pl.col("renewable").cast(pl.Int8),
    ).select("patient_id", "drug_atc", "date", "chronic", "renewable").write_csv(rx_path)
    diagnoses = sorted(diagnoses, key=lambda d: (d.patient_id, d.icd_code, d.date))
    write_diagnoses(dx_path, diagnoses)
    truth.write_csv(gt_path)
    return {
        "prescriptions": str(rx_path),
        "diagnoses": str(dx_path),
        "ground_truth": str(gt_path),
        "n_prescriptions": frame.height,
        "n_diagnoses": len(diagnoses),
    }


def cmd_split(cfg: PipelineConfig) -> tuple[set[str], set[str]]:
    rx = _require(cfg.prescriptions, "provide --prescriptions or run simulate")
    dx = _require(cfg.diagnoses, "provide --diagnoses or run simulate")
    patients = set(batch.load_prescriptions_frame(rx)["patient_id"].unique().to_list())
    dx_frame = pl.read_csv(dx, schema_overrides={"patient_id": pl.Utf8})
    patients |= set(dx_frame["patient_id"].unique().to_list())
    train, test = split_patients(patients, cfg.train_fraction, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    train_path, test_path = cfg.out / "train_patients.txt", cfg.out / "test_patients.txt"
    _write_patient_file(train_path, train)
    _write_patient_file(test_path, test)
    _update_manifest(cfg, "split", [rx, dx], [train_path, test_path])
    return train, test


def cmd_fit_params(cfg: PipelineConfig, patients_file=None) -> population.RegimeParamTable:
    rx = _require(cfg.prescriptions, "provide --prescriptions")
    patients = None
    if patients_file:
        patients = _read_patient_file(_require(patients_file, "run split first"))
    events, report = ingest_prescriptions(rx)
    if report.n_errors:
        logger.warning("%d malformed prescription rows skipped", report.n_errors)
    if patients is not None:
        events = [e for e in events if e.patient_id in patients]
    trajectories = build_trajectories(events)
    table = population.estimate_params(
        trajectories,
        label_filter=population.LabelFilter(cfg.label_filter),
        min_intervals=cfg.min_intervals,
        train_patients=patients,
    )
    out_path = cfg.path_params()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    population.save_params(table, out_path)
    _stamp_json(out_path, cfg.fingerprint())
    _update_manifest(cfg, "fit_params", [rx] + ([patients_file] if patients_file else []), [out_path])
    return table


def _check_leakage(artifact_patients, scored_patients, artifact: str) -> None:
    if not artifact_patients:
        return
    overlap = set(artifact_patients) & set(scored_patients)
    if overlap:
        sample = ", ".join(sorted(overlap)[:5])
        raise LeakageError(
            f"{artifact} was built from {len(overlap)} of the patients being scored "
            f"(e.g. {sample}); refusing to evaluate on training patients"
        )


def cmd_detect(
    cfg: PipelineConfig,
    patients_file=None,
    out_name: str = "onsets.csv",
    leakage_guard: bool | None = None,
) -> dict:
    """Run change-point detection over a prescriptions file.

    With the leakage guard enabled, scoring any patient recorded in the
    parameter table's training set is a hard error.
    """
    rx = _require(cfg.prescriptions, "provide --prescriptions")
    params_path = _require(cfg.path_params(), "run fit-params first")
    table = population.load_params(params_path)
    guard = cfg.leakage_guard if leakage_guard is None else leakage_guard
    patients = None
    if patients_file:
        patients = _read_patient_file(_require(patients_file, "run split first"))

    cfg.out.mkdir(parents=True, exist_ok=True)
    out_path = cfg.out / out_name
    config = cfg.detection_config()

    if cfg.engine == "columnar":
        frame = batch.load_prescriptions_frame(rx)
        if patients is not None:
            frame = frame.filter(pl.col("patient_id").is_in(sorted(patients)))
        if guard:
            _check_leakage(
                table.train_patients or (),
                frame["patient_id"].unique().to_list(),
                f"parameter table {params_path}",
            )
        onsets, stats = batch.detect_frame(frame, table, config)
        onsets.with_columns(pl.col("onset_date").dt.to_string()).write_csv(out_path)
        result = {
            "n_pairs": stats.n_pairs,
            "n_skipped_short": stats.n_skipped_short,
            "n_missing_params": stats.n_missing_params,
            "n_scanned": stats.n_scanned,
            "n_accepted": stats.n_accepted,
        }
        if stats.missing_keys:
            result["missing_keys_sample"] = stats.missing_keys
    else:
        events, report = ingest_prescriptions(rx)
        if report.n_errors:
            logger.warning("%d malformed prescription rows skipped", report.n_errors)
        if patients is not None:
            events = [e for e in events if e.patient_id in patients]
        if guard:
            _check_leakage(
                table.train_patients or (),
                {e.patient_id for e in events},
                f"parameter table {params_path}",
            )
        trajectories = build_trajectories(events)
        result_batch = detect_all(trajectories, table, config, threads=cfg.threads)
        write_onsets_csv(out_path, result_batch.records)
        result = {
            "n_pairs": result_batch.n_input,
            "n_skipped_short": result_batch.n_skipped_short,
            "n_missing_params": len(result_batch.errors),
            "n_scanned": result_batch.n_scanned,
            "n_accepted": len(result_batch.records),
        }
    _update_manifest(
        cfg,
        f"detect:{out_name}",
        [rx, params_path] + ([patients_file] if patients_file else []),
        [out_path],
    )
    result["out"] = str(out_path)
    return result


def cmd_build_dict(
    cfg: PipelineConfig, onsets_path, patients_file=None
) -> phenotype.PhenotypeDictionary:
    onsets_path = _require(onsets_path, "run detect on the training patients first")
    dx = _require(cfg.diagnoses, "provide --diagnoses")
    onsets = read_onsets_csv(onsets_path)
    diagnoses, report = ingest_diagnoses(dx)
    if report.n_errors:
        logger.warning("%d malformed diagnosis rows skipped", report.n_errors)
    patients = None
    if patients_file:
        patients = _read_patient_file(_require(patients_file, "run split first"))
        diagnoses = [d for d in diagnoses if d.patient_id in patients]
        onsets = [o for o in onsets if o.patient_id in patients]
    dictionary = phenotype.build_dictionary(
        onsets, diagnoses, config=cfg.dictionary_config(), train_patients=patients
    )
    out_path = cfg.path_dict()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    phenotype.save_dictionary(dictionary, out_path)
    _stamp_json(out_path, cfg.fingerprint())
    _update_manifest(
        cfg,
        "build_dict",
        [onsets_path, dx] + ([patients_file] if patients_file else []),
        [out_path],
    )
    return dictionary


def cmd_infer(
    cfg: PipelineConfig,
    onsets_path,
    patients_file=None,
    out_name: str = "disease_onsets.csv",
    leakage_guard: bool | None = None,
) -> dict:
    """Disease-level inference: change-point onsets through the frozen
    dictionary, plus the naive chronic-label baseline on the same cohort."""
    onsets_path = _require(onsets_path, "run detect first")
    rx = _require(cfg.prescriptions, "provide --prescriptions")
    dict_path = _require(cfg.path_dict(), "run build-dict first")
    dictionary = phenotype.load_dictionary(dict_path)
    onsets = read_onsets_csv(onsets_path)
    events, report = ingest_prescriptions(rx)
    if report.n_errors:
        logger.warning("%d malformed prescription rows skipped", report.n_errors)
    patients = None
    if patients_file:
        patients = _read_patient_file(_require(patients_file, "run split first"))
        onsets = [o for o in onsets if o.patient_id in patients]
        events = [e for e in events if e.patient_id in patients]
    guard = cfg.leakage_guard if leakage_guard is None else leakage_guard
    if guard:
        scored = {o.patient_id for o in onsets} | {e.patient_id for e in events}
        _check_leakage(dictionary.train_patients or (), scored, f"dictionary {dict_path}")

    cp = phenotype.infer_disease_onsets(onsets, dictionary)
    trajectories = build_trajectories(events)
    naive = phenotype.naive_baseline(trajectories, dictionary)
    records = sorted(cp + naive, key=lambda r: (r.patient_id, r.icd_code, r.method))
    cfg.out.mkdir(parents=True, exist_ok=True)
    out_path = cfg.out / out_name
    phenotype.write_disease_onsets_csv(out_path, records)
    _update_manifest(
        cfg,
        "infer",
        [onsets_path, rx, dict_path] + ([patients_file] if patients_file else []),
        [out_path],
    )
    return {
        "out": str(out_path),
        "n_changepoint": len(cp),
        "n_naive": len(naive),
    }


def cmd_evaluate(
    cfg: PipelineConfig, disease_onsets_path, patients_file=None
) -> dict:
    """Metrics files: timediff.csv, recall.csv, density.csv, summary.json."""
    disease_onsets_path = _require(disease_onsets_path, "run infer first")
    dx = _require(cfg.diagnoses, "provide --diagnoses")
    rx = _require(cfg.prescriptions, "provide --prescriptions")
    records = phenotype.read_disease_onsets_csv(disease_onsets_path)
    diagnoses, _ = ingest_diagnoses(dx)
    prescriptions, _ = ingest_prescriptions(rx)
    if patients_file:
        patients = _read_patient_file(_require(patients_file, "run split first"))
        records = [r for r in records if r.patient_id in patients]
        diagnoses = [d for d in diagnoses if d.patient_id in patients]
        prescriptions = [p for p in prescriptions if p.patient_id in patients]

    stats = evalharness.time_differences(records, diagnoses)
    curve = evalharness.recall_at(records, diagnoses, cfg.deltas)
    curve365 = evalharness.recall_at(records, diagnoses, (365,))
    recall365 = {
        icd: {m: pts[0][1] for m, pts in per.items()}
        for icd, per in curve365.points.items()
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    evalharness.write_timediff_csv(cfg.out / "timediff.csv", stats, records, diagnoses)
    evalharness.write_recall_csv(cfg.out / "recall.csv", curve)

    summary: dict = {
        "fingerprint": cfg.fingerprint(),
        "counts": {
            "onsets": {
                m: sum(1 for r in records if r.method == m)
                for m in (METHOD_CHANGEPOINT, METHOD_NAIVE)
            },
            "diagnosed_pairs": len(evalharness.first_diagnosis_dates(diagnoses)),
        },
        "timediff": {
            f"{icd}/{method}": sample.summary()
            for (icd, method), sample in sorted(stats.samples.items())
        },
    }
    outputs = [cfg.out / "timediff.csv", cfg.out / "recall.csv", cfg.out / "summary.json"]
    try:
        density = evalharness.density_recall_correlation(recall365, prescriptions, diagnoses)
        evalharness.write_density_csv(cfg.out / "density.csv", density)
        summary["density_recall_pearson"] = density.pearson
        outputs.append(cfg.out / "density.csv")
    except (ValueError, evalharness.UndefinedCorrelationError) as exc:
        summary["density_recall_pearson"] = None
        summary["density_recall_note"] = str(exc)
    if cfg.cutover and cfg.cutover_icd:
        summary["pre_cutover_fraction"] = evalharness.pre_cutover_fraction(
            records, parse_day(cfg.cutover), cfg.cutover_icd
        )
    evalharness.write_summary_json(cfg.out / "summary.json", summary)
    _update_manifest(
        cfg,
        "evaluate",
        [disease_onsets_path, dx, rx] + ([patients_file] if patients_file else []),
        outputs,
    )
    return summary


def cmd_pipeline(cfg: PipelineConfig, scenario=None) -> dict:
    """Full run. With a scenario, the cohort is simulated first and the
    config's input paths are pointed at the simulated files."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"out_dir": str(out)}
    if scenario is not None:
        sim = cmd_simulate(scenario, out)
        cfg.prescriptions = sim["prescriptions"]
        cfg.diagnoses = sim["diagnoses"]
        report["simulate"] = sim

    train, test = cmd_split(cfg)
    if train & test:
        raise LeakageError("train/test patient sets overlap after split")
    train_file, test_file = out / "train_patients.txt", out / "test_patients.txt"
    report["split"] = {"n_train": len(train), "n_test": len(test)}

    cmd_fit_params(cfg, patients_file=train_file)
    report["fit_params"] = {"params": str(cfg.path_params())}

    report["detect_train"] = cmd_detect(
        cfg, patients_file=train_file, out_name="onsets_train.csv", leakage_guard=False
    )
    cmd_build_dict(cfg, out / "onsets_train.csv", patients_file=train_file)
    report["detect_test"] = cmd_detect(
        cfg, patients_file=test_file, out_name="onsets_test.csv", leakage_guard=cfg.leakage_guard
    )
    report["infer"] = cmd_infer(
        cfg,
        out / "onsets_test.csv",
        patients_file=test_file,
        leakage_guard=cfg.leakage_guard,
    )
    report["evaluate"] = cmd_evaluate(
        cfg, out / "disease_onsets.csv", patients_file=test_file
    )
    return report
