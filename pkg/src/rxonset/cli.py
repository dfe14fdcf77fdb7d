"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (missing/malformed
inputs, leakage), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from . import pipeline
from .batch import DataFormatError
from .evalharness import DEFAULT_DELTAS, UndefinedCorrelationError
from .phenotype import SchemaVersionError as DictSchemaError
from .pipeline import LeakageError, MissingInputError, PipelineConfig
from .population import SchemaVersionError as ParamsSchemaError
from .synthcohort import PRESETS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DATA_ERRORS = (
    FileNotFoundError,
    MissingInputError,
    DataFormatError,
    LeakageError,
    ParamsSchemaError,
    DictSchemaError,
    UndefinedCorrelationError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_deltas(text: str):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _add_common(parser):
    parser.add_argument("--out-dir", help="directory for stage outputs (default .)")
    parser.add_argument("--prescriptions", help="prescriptions CSV")
    parser.add_argument("--diagnoses", help="diagnoses CSV")
    parser.add_argument("--params", dest="params_path", help="parameter table JSON")
    parser.add_argument("--dict", dest="dict_path", help="phenotype dictionary JSON")
    parser.add_argument("--epsilon", type=float, help="change-point acceptance margin")
    parser.add_argument("--min-prescriptions", type=int, help="events needed per trajectory")
    parser.add_argument("--train-fraction", type=float, help="training split fraction")
    parser.add_argument("--seed", type=int, help="split/simulation seed")
    parser.add_argument("--deltas", type=_parse_deltas, help="comma-separated recall windows (days)")
    parser.add_argument("--threads", type=int, help="worker cap for the reference engine")
    parser.add_argument(
        "--engine", choices=("columnar", "reference"), help="detection implementation"
    )
    parser.add_argument(
        "--no-leakage-guard",
        action="store_true",
        help="allow applying frozen artifacts to their own training patients",
    )
    parser.add_argument("--config", help="JSON file of config defaults (flags override)")


def _build_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(json.load(fh))
    names = {f.name for f in fields(PipelineConfig)}
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "no_leakage_guard", False):
        values["leakage_guard"] = False
    values = {k: v for k, v in values.items() if k in names}
    if "deltas" in values:
        values["deltas"] = tuple(values["deltas"])
    return PipelineConfig(**values)


def build_parser() -> _Parser:
    parser = _Parser(prog="rxonset", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    p.add_argument("--scenario", required=True, help=f"preset ({', '.join(sorted(PRESETS))}) or JSON path")
    p.add_argument("--n-patients", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("split", help="train/test patient partition")
    _add_common(p)

    p = sub.add_parser("fit-params", help="estimate the per-drug parameter table")
    _add_common(p)
    p.add_argument("--patients", help="restrict to patient ids listed in this file")
    p.add_argument("--label-filter", dest="label_filter", choices=("chronic_only", "all"))
    p.add_argument("--min-intervals", dest="min_intervals", type=int)

    p = sub.add_parser("detect", help="change-point onset detection")
    _add_common(p)
    p.add_argument("--patients")
    p.add_argument("--out-name", default="onsets.csv")
    p.add_argument(
        "--leakage-guard",
        action="store_true",
        help="error if scored patients overlap the params' training set",
    )

    p = sub.add_parser("build-dict", help="drug-disease dictionary from training onsets")
    _add_common(p)
    p.add_argument("--onsets", required=True)
    p.add_argument("--patients")

    p = sub.add_parser("infer", help="disease-level onsets (change-point + naive)")
    _add_common(p)
    p.add_argument("--onsets", required=True)
    p.add_argument("--patients")
    p.add_argument(
        "--leakage-guard",
        action="store_true",
        help="error if scored patients overlap the dictionary's training set",
    )

    p = sub.add_parser("evaluate", help="metrics against recorded diagnoses")
    _add_common(p)
    p.add_argument("--disease-onsets", required=True)
    p.add_argument("--patients")
    p.add_argument("--cutover", help="ISO date for pre-cutover fractions")
    p.add_argument("--cutover-icd")

    p = sub.add_parser("pipeline", help="simulate/split/fit/detect/dict/infer/evaluate")
    _add_common(p)
    p.add_argument("--scenario", help="simulate this preset or scenario file first")
    p.add_argument("--n-patients", type=int)
    return parser


def _dispatch(args) -> int:
    if args.command == "simulate":
        scenario = pipeline.resolve_scenario(args.scenario, args.n_patients, args.seed)
        result = pipeline.cmd_simulate(scenario, args.out_dir)
        print(json.dumps(result, indent=1))
        return EXIT_OK

    cfg = _build_config(args)
    if args.command == "split":
        train, test = pipeline.cmd_split(cfg)
        print(json.dumps({"n_train": len(train), "n_test": len(test)}))
    elif args.command == "fit-params":
        table = pipeline.cmd_fit_params(cfg, patients_file=args.patients)
        print(json.dumps({"params": str(cfg.path_params()), "n_entries": len(table.entries)}))
    elif args.command == "detect":
        guard = True if args.leakage_guard else None
        result = pipeline.cmd_detect(
            cfg, patients_file=args.patients, out_name=args.out_name, leakage_guard=guard
        )
        print(json.dumps(result, indent=1))
    elif args.command == "build-dict":
        dictionary = pipeline.cmd_build_dict(cfg, args.onsets, patients_file=args.patients)
        print(json.dumps({"dict": str(cfg.path_dict()), "n_icds": len(dictionary.entries)}))
    elif args.command == "infer":
        guard = True if args.leakage_guard else None
        result = pipeline.cmd_infer(cfg, args.onsets, patients_file=args.patients, leakage_guard=guard)
        print(json.dumps(result, indent=1))
    elif args.command == "evaluate":
        cfg.cutover = args.cutover or cfg.cutover
        cfg.cutover_icd = args.cutover_icd or cfg.cutover_icd
        result = pipeline.cmd_evaluate(cfg, args.disease_onsets, patients_file=args.patients)
        print(json.dumps({"summary": str(cfg.out / "summary.json"), **result.get("counts", {})}))
    elif args.command == "pipeline":
        scenario = None
        if args.scenario:
            scenario = pipeline.resolve_scenario(args.scenario, args.n_patients, args.seed)
        result = pipeline.cmd_pipeline(cfg, scenario=scenario)
        print(json.dumps(result, indent=1, default=str))
    else:  # pragma: no cover - argparse enforces choices
        return EXIT_USAGE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except DATA_ERRORS as exc:
        print(f"rxonset: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"rxonset: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
