"""Command-line entry point: ``mealsense {synth,extract,stats,evaluate}``.

Exit codes: 0 success, 2 invalid input or config, 3 refusing to overwrite,
4 degenerate data.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

from .episodes import ExtractionConfig, FeatureMatrix, build_matrix
from .errors import DegenerateDataError, InvalidInputError
from .evaluation import (BALANCE_MODES, FEATURE_GROUPS, default_k, group_kfold,
                         run_experiment)
from .forest import ForestParams
from .ingest import DATASET_TAGS, load_cohort
from .stats import (distribution_summary, distributions_csv, effect_sizes_csv,
                    histogram_from_matrix, rank_features, samples_csv)
from .synth import CohortSpec, generate_cohort

log = logging.getLogger("mealsense")

EXIT_OK, EXIT_INVALID, EXIT_EXISTS, EXIT_DEGENERATE = 0, 2, 3, 4
CONFIG_ECHO = "run_config.json"


class RefuseOverwrite(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on besides its input files."""

    seed: int
    dataset_style: str | None = None
    extraction: dict = field(default_factory=dict)
    forest: ForestParams = field(default_factory=ForestParams)
    k: int | None = None
    groups: tuple[str, ...] = tuple(FEATURE_GROUPS)
    balance: str = "post_split"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise InvalidInputError("seed is required (integer)")
        if self.dataset_style is not None and self.dataset_style not in DATASET_TAGS:
            raise InvalidInputError(f"unknown dataset style '{self.dataset_style}'")
        if self.k is not None and (isinstance(self.k, bool) or not isinstance(self.k, int)
                                   or self.k < 1):
            raise InvalidInputError("k must be a positive integer")
        for g in self.groups:
            if g not in FEATURE_GROUPS:
                raise InvalidInputError(f"unknown feature group '{g}'")
        if not self.groups:
            raise InvalidInputError("at least one feature group is required")
        if self.balance not in BALANCE_MODES:
            raise InvalidInputError(f"balance must be one of {', '.join(BALANCE_MODES)}")
        self.extraction_config(self.dataset_style or "custom")

    def extraction_config(self, dataset_tag: str) -> ExtractionConfig:
        known = {f.name for f in fields(ExtractionConfig)}
        unknown = set(self.extraction) - known
        if unknown:
            raise InvalidInputError(f"unknown extraction fields: {', '.join(sorted(unknown))}")
        try:
            return ExtractionConfig.for_style(dataset_tag, **self.extraction)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["groups"] = list(self.groups)
        return doc


def _forest_params(doc: Mapping) -> ForestParams:
    known = {f.name for f in fields(ForestParams)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInputError(f"unknown forest fields: {', '.join(sorted(unknown))}")
    try:
        return ForestParams(**doc)
    except TypeError as exc:
        raise InvalidInputError(str(exc)) from None


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InvalidInputError("config file not found", source=str(p))
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON ({exc.msg})", source=str(p),
                                line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a JSON object", source=str(p))
    return doc


def resolve_run_config(doc: Mapping, args: argparse.Namespace) -> RunConfig:
    """Merge a config document with command-line flags (flags win)."""
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInputError(f"unknown config fields: {', '.join(sorted(unknown))}")
    doc = dict(doc)
    extraction = dict(doc.get("extraction", {}))
    forest = dict(doc.get("forest", {}))
    if getattr(args, "alpha", None) is not None:
        extraction["alpha"] = args.alpha
    for flag in ("ntree", "mtry", "max_depth", "min_leaf"):
        if getattr(args, flag, None) is not None:
            forest[flag] = getattr(args, flag)
    if args.allow_any_ntree:
        forest["allow_any_ntree"] = True
    if args.seed is not None:
        doc["seed"] = args.seed
    if "seed" not in doc:
        raise InvalidInputError("seed is required")
    forest.setdefault("seed", doc["seed"])
    for flag in ("k", "balance"):
        if getattr(args, flag, None) is not None:
            doc[flag] = getattr(args, flag)
    if getattr(args, "groups", None):
        doc["groups"] = args.groups
    return RunConfig(seed=doc["seed"], dataset_style=doc.get("dataset_style"),
                     extraction=extraction, forest=_forest_params(forest), k=doc.get("k"),
                     groups=tuple(doc.get("groups", FEATURE_GROUPS)),
                     balance=doc.get("balance", "post_split"))


def prepare_out_dir(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise InvalidInputError("output path exists and is not a directory", source=str(out))
    if out.is_dir() and any(out.iterdir()) and not force:
        raise RefuseOverwrite(f"{out}: output directory is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _echo_config(out: Path, doc: Mapping) -> None:
    _write(out / CONFIG_ECHO, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec_path = args.spec or args.config
    doc = load_config(spec_path)
    if args.style is not None:
        doc["style"] = args.style
    spec = CohortSpec.from_json(doc, seed=args.seed)
    out = prepare_out_dir(args.out, args.force)
    cohort = generate_cohort(spec)
    cohort.write(out)
    _echo_config(out, {"command": "synth", "spec": spec.to_json()})
    log.info("generated %d episodes for %d participants", cohort.n_episodes,
             spec.n_participants)
    print(out / "manifest.json")
    return EXIT_OK


def cmd_extract(args) -> int:
    doc = load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    doc.setdefault("seed", 0)  # extraction draws no random numbers
    cfg = resolve_run_config(doc, args)
    cohort = load_cohort(args.data_dir)
    tag = cohort.manifest.dataset_tag
    if cfg.dataset_style is not None and cfg.dataset_style != tag:
        raise InvalidInputError(
            f"config dataset_style {cfg.dataset_style} does not match the manifest ({tag})")
    extraction = cfg.extraction_config(tag)
    out = prepare_out_dir(args.out, args.force)
    matrix = build_matrix(cohort, extraction)
    matrix.write(out / "features.csv")
    _write(out / "build_log.json", json.dumps(matrix.log, indent=2, sort_keys=True) + "\n")
    _echo_config(out, {"command": "extract", "dataset_style": tag,
                       "extraction": asdict(extraction)})
    log.info("%d episodes, %d rows, %d dropped", matrix.log["n_episodes"],
             matrix.log["n_rows"], matrix.log["n_dropped"])
    print(out / "features.csv")
    return EXIT_OK


def cmd_stats(args) -> int:
    matrix = FeatureMatrix.read(args.matrix)
    try:
        rows = rank_features(matrix)
    except DegenerateDataError as exc:
        raise InvalidInputError(str(exc), source=args.matrix) from None
    out = prepare_out_dir(args.out, args.force)
    _write(out / "effect_sizes.csv", effect_sizes_csv(rows))
    _write(out / "temporal_histogram.csv",
           histogram_from_matrix(matrix, args.bin_minutes).to_csv())
    if args.features:
        names = args.features
    else:
        numeric = {f.name for f in matrix.catalog if f.kind == "numeric"}
        names = [r.feature for r in rows if r.feature in numeric][:args.top]
    summaries = distribution_summary(matrix, names)
    _write(out / "distributions.csv", distributions_csv(summaries))
    _write(out / "distribution_samples.csv", samples_csv(summaries))
    _echo_config(out, {"command": "stats", "bin_minutes": args.bin_minutes,
                       "features": list(names)})
    print(out / "effect_sizes.csv")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_run_config(load_config(args.config), args)
    matrix = FeatureMatrix.read(args.matrix)
    n_people = len(set(matrix.participant_ids))
    k = cfg.k if cfg.k is not None else default_k(n_people)
    plan = group_kfold(matrix.participant_ids, k, cfg.seed)
    out = prepare_out_dir(args.out, args.force)
    report = run_experiment(matrix, cfg.groups, plan, cfg.forest, balance=cfg.balance,
                            threads=args.threads)
    _write(out / "experiment_report.csv", report.to_csv())
    _write(out / "details.json", report.details_json())
    echo = cfg.to_json()
    echo.update(command="evaluate", k=k, n_folds=len(plan))
    _echo_config(out, echo)
    for g in report.groups:
        log.info("%s: accuracy %.2f%%", g.name, 100 * g.pooled.accuracy)
    print(out / "experiment_report.csv")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="write into a non-empty --out")
    common.add_argument("--threads", type=_positive, default=1,
                        help="worker threads (results do not depend on it)")
    common.add_argument("--allow-any-ntree", action="store_true",
                        help="accept ntree outside [100, 150]")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="mealsense",
                                     description="Social context of eating from sensing data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("spec", nargs="?", help="cohort spec JSON (defaults to --config)")
    p.add_argument("--style", choices=["wearable-style", "phone-style"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="build the feature matrix")
    p.add_argument("data_dir")
    p.add_argument("--alpha", type=_positive, help="window half-width in minutes")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", parents=[common], help="effect sizes and distributions")
    p.add_argument("matrix", help="feature matrix CSV (catalog sidecar alongside)")
    p.add_argument("--bin-minutes", type=_positive, default=60)
    p.add_argument("--features", nargs="+", help="features to summarize")
    p.add_argument("--top", type=_positive, default=6,
                   help="summarize this many top-ranked numeric features")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("evaluate", parents=[common], help="cross-validated forest accuracy")
    p.add_argument("matrix")
    p.add_argument("--k", type=_positive, help="participants per test fold")
    p.add_argument("--groups", nargs="+", choices=list(FEATURE_GROUPS))
    p.add_argument("--balance", choices=list(BALANCE_MODES))
    p.add_argument("--ntree", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-leaf", type=int)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except RefuseOverwrite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
