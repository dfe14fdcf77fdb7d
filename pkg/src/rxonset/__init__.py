"""rxonset: chronic treatment onset inference from prescription streams.

Models per-(patient, drug) prescription timing as a renewal process,
detects the single change-point from sporadic (Poisson) to sustained
(Weibull) prescribing, aggregates drug-level onsets into disease-level
treated phenotypes through an empirically learned drug-disease
dictionary, and evaluates against recorded diagnoses.
"""

from .changepoint import (
    ChangePointResult,
    DetectionConfig,
    OnsetRecord,
    changepoint_loglik,
    detect_all,
    detect_onset,
)
from .events import (
    DiagnosisEvent,
    Interval,
    PrescriptionEvent,
    Regime,
    Trajectory,
    build_trajectories,
    ingest_diagnoses,
    ingest_prescriptions,
    split_patients,
)
from .phenotype import (
    DictionaryConfig,
    DiseaseOnset,
    PhenotypeDictionary,
    build_dictionary,
    infer_disease_onsets,
    naive_baseline,
)
from .population import (
    LabelFilter,
    MissingParamsError,
    RegimeParamTable,
    compare_label_filters,
    estimate_params,
    load_params,
    save_params,
)
from .renewal import (
    DegenerateDataError,
    ExpParams,
    FitError,
    WeibullParams,
    exp_loglik,
    fit_exponential,
    fit_weibull,
    mean_interval,
    weibull_loglik,
)
from .synthcohort import ScenarioConfig, sample_weibull, simulate

__version__ = "0.1.0"

__all__ = [
    "ChangePointResult",
    "DetectionConfig",
    "OnsetRecord",
    "changepoint_loglik",
    "detect_all",
    "detect_onset",
    "DiagnosisEvent",
    "Interval",
    "PrescriptionEvent",
    "Regime",
    "Trajectory",
    "build_trajectories",
    "ingest_diagnoses",
    "ingest_prescriptions",
    "split_patients",
    "DictionaryConfig",
    "DiseaseOnset",
    "PhenotypeDictionary",
    "build_dictionary",
    "infer_disease_onsets",
    "naive_baseline",
    "LabelFilter",
    "MissingParamsError",
    "RegimeParamTable",
    "compare_label_filters",
    "estimate_params",
    "load_params",
    "save_params",
    "DegenerateDataError",
    "ExpParams",
    "FitError",
    "WeibullParams",
    "exp_loglik",
    "fit_exponential",
    "fit_weibull",
    "mean_interval",
    "weibull_loglik",
    "ScenarioConfig",
    "sample_weibull",
    "simulate",
]
