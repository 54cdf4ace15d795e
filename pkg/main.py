#!/usr/bin/env python3
"""
turnover-forest - share turnover classification pipeline
Command-line entry point: ingest, features, train, evaluate, predict, synth
"""

import argparse
import logging
import os
import sys
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import artifacts
from artifacts import MissingArtifact, Workdir
from baselines import TrainingError, train_multinomial_logreg, train_single_tree, train_svm_ovr
from boruta import Decision, run_boruta
from config import DEFAULTS, ConfigError, PipelineConfig, load_config
from data_model import CLASS_ORDER, DomainError, LabeledDataset
from evaluation import (
    SyntheticSpec,
    TrainedModel,
    comparative_report,
    figure3_frame,
    figure4_frame,
    generate_synthetic,
    published_comparisons,
)
from figures import render_boruta, render_figure3, render_figure4
from forest import train_forest
from ingestion import (
    COMPANY_PREFIX,
    ParseError,
    RawTable,
    SchemaError,
    VocabularyError,
    dataset_from_frame,
    dataset_to_frame,
    drop_missing,
    encode_features,
    encode_table_rows,
    parse_csv,
    records_from_table,
    records_to_frame,
    split_train_validation,
)
from seeding import derive_seed

logger = logging.getLogger(__name__)

MODEL_NAMES = ("randforest", "partylike", "rpartlike", "svm_ovr", "multinomial_logistic")
SYNTHETIC_CSV = "synthetic.csv"
SYNTHETIC_CONFIG_JSON = "synthetic_config.json"
REPORT_JSON = "report.json"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad user input: missing files, unknown flags, unusable rows."""


class PipelineError(RuntimeError):
    """The pipeline cannot produce a result from otherwise valid inputs."""


def _read_input(path: str) -> bytes:
    if not path:
        raise UsageError("no input CSV given (use --input or input_csv in the config)")
    if not os.path.exists(path):
        raise UsageError(f"input file not found: {path}")
    with open(path, "rb") as f:
        return f.read()


def _load_records(raw: bytes, extra_features: Sequence[str]):
    table, dropped = drop_missing(parse_csv(raw))
    records, invalid = records_from_table(table, extra_features)
    return table, records, dropped, invalid


def _load_dataset(wd: Workdir, name: str) -> LabeledDataset:
    return dataset_from_frame(wd.load_frame(name, "run ingest first"))


def cmd_ingest(cfg: PipelineConfig) -> int:
    raw = _read_input(cfg.input_csv)
    table, records, dropped, invalid = _load_records(raw, cfg.extra_features)
    rows_in = table.n_rows + dropped
    if not records:
        raise UsageError(f"{cfg.input_csv}: no complete, valid records")
    if len(records) < 2:
        raise UsageError(f"{cfg.input_csv}: only one complete, valid record; at least 2 are needed to split")

    # Stable sort so the sequential split follows turnover order.
    records = sorted(records, key=lambda r: r.total_turnover)
    dataset = encode_features(records, cfg.bins, cfg.feature_exclusions, cfg.extra_features)
    train, valid = split_train_validation(dataset, cfg.split)

    wd = Workdir(cfg.workdir)
    wd.ensure()
    wd.save_frame(artifacts.CLEAN_CSV, records_to_frame(records))
    wd.save_frame(artifacts.ENCODED_CSV, dataset_to_frame(dataset))
    wd.save_frame(artifacts.TRAIN_CSV, dataset_to_frame(train))
    wd.save_frame(artifacts.VALID_CSV, dataset_to_frame(valid))
    wd.save_json(
        artifacts.MANIFEST_JSON,
        {
            "seed": cfg.split.seed,
            "split": {"strategy": cfg.split.strategy, "train_fraction": cfg.split.train_fraction},
            "bins": cfg.bins.to_dict(),
            "company_vocabulary": sorted({r.company for r in records}),
            "feature_names": list(dataset.feature_names),
            "rows_in": rows_in,
            "rows_out": len(records),
            "dropped": dropped,
            "invalid": len(invalid),
            "class_histogram": dataset.class_histogram(),
            "train_rows": train.n_rows,
            "valid_rows": valid.n_rows,
        },
    )
    wd.save_json(artifacts.CONFIG_JSON, cfg.to_dict())

    print(f"Ingested {rows_in} rows: {dropped} incomplete, {len(invalid)} invalid, {len(records)} kept.")
    print("Class histogram: " + ", ".join(f"{k}={v}" for k, v in dataset.class_histogram().items()))
    print(f"Split {train.n_rows} train / {valid.n_rows} valid -> {wd.root}")
    for warning in table.warnings:
        print(f"warning: {warning}")
    return EXIT_OK


def cmd_features(cfg: PipelineConfig) -> int:
    wd = Workdir(cfg.workdir)
    train = _load_dataset(wd, artifacts.TRAIN_CSV)
    report = run_boruta(train, cfg.boruta, workers=cfg.workers)

    history = report.history()
    history["decisions"] = {d.value: report.names_with(d) for d in Decision}
    wd.save_frame(artifacts.BORUTA_CSV, report.to_frame())
    wd.save_json(artifacts.BORUTA_HISTORY_JSON, history)
    wd.save_bytes(artifacts.BORUTA_SVG, render_boruta(report))

    print(f"Boruta finished after {report.iterations_run} iterations.")
    for decision in Decision:
        names = report.names_with(decision)
        print(f"{decision.value} ({len(names)}): {', '.join(names) or '-'}")
    if not cfg.use_boruta_selection:
        print("Selection is off: training will use every feature.")
    return EXIT_OK


def selected_features(cfg: PipelineConfig, wd: Workdir, train: LabeledDataset) -> List[str]:
    if not cfg.use_boruta_selection:
        return list(train.feature_names)
    if not wd.exists(artifacts.BORUTA_CSV):
        logger.warning("no %s in %s; training on all features", artifacts.BORUTA_CSV, wd.root)
        return list(train.feature_names)
    decisions = wd.load_frame(artifacts.BORUTA_CSV)
    keep = {Decision.CONFIRMED.value}
    if cfg.include_tentative:
        keep.add(Decision.TENTATIVE.value)
    chosen = set(decisions.loc[decisions["decision"].isin(keep), "feature"].astype(str))
    names = [name for name in train.feature_names if name in chosen]
    if not names:
        raise PipelineError("no features remain after Boruta selection")
    return names


def _fit(name: str, train: LabeledDataset, cfg: PipelineConfig) -> TrainedModel:
    if name == "randforest":
        model = train_forest(train, cfg.n_trees, cfg.forest, cfg.forest_seed, workers=cfg.workers)
        return TrainedModel(name, "forest", model, train.feature_names)
    if name in ("partylike", "rpartlike"):
        tree = train_single_tree(train, name, seed=derive_seed(cfg.forest_seed, "single", name))
        return TrainedModel(name, "tree", tree, train.feature_names, params={"variant": name})
    if name == "svm_ovr":
        return TrainedModel(name, "svm_ovr", train_svm_ovr(train, cfg.gd), train.feature_names)
    return TrainedModel(name, "multinomial_logistic", train_multinomial_logreg(train, cfg.gd), train.feature_names)


def cmd_train(cfg: PipelineConfig) -> int:
    wd = Workdir(cfg.workdir)
    train = _load_dataset(wd, artifacts.TRAIN_CSV)
    features = selected_features(cfg, wd, train)
    train = train.select_features(features)
    vocabulary = tuple(wd.manifest().get("company_vocabulary", ()))

    trained: List[TrainedModel] = []
    summary: Dict[str, Dict] = {}
    for name in MODEL_NAMES:
        started = time.perf_counter()
        try:
            model = _fit(name, train, cfg)
        except TrainingError as exc:
            logger.error("%s failed: %s", name, exc)
            summary[name] = {"status": "failed", "error": str(exc)}
            continue
        model.train_seconds = time.perf_counter() - started if cfg.record_timing else 0.0
        model.company_vocabulary = vocabulary
        trained.append(model)
        entry = {"status": "ok", "train_seconds": model.train_seconds}
        if model.kind == "forest":
            entry["oob_accuracy"] = model.model.oob_accuracy
        summary[name] = entry

    if not trained:
        raise PipelineError("every model failed to train")
    for model in trained:
        wd.save_model(model)
    wd.save_json(artifacts.TRAINING_JSON, {"features": features, "models": summary})

    print(f"Trained on {train.n_rows} rows and {len(features)} features.")
    for name in MODEL_NAMES:
        entry = summary[name]
        if entry["status"] == "ok":
            extra = ""
            if entry.get("oob_accuracy") is not None:
                extra = f", out-of-bag accuracy {entry['oob_accuracy'] * 100:.2f}%"
            print(f"  {name}: ok ({entry['train_seconds']:.2f}s{extra})")
        else:
            print(f"  {name}: FAILED ({entry['error']})")
    return EXIT_OK


def cmd_evaluate(cfg: PipelineConfig) -> int:
    wd = Workdir(cfg.workdir)
    valid = _load_dataset(wd, artifacts.VALID_CSV)
    training = wd.load_json(artifacts.TRAINING_JSON, "run train first")
    manifest = wd.manifest()
    valid = valid.select_features(training["features"])

    models = []
    for name, entry in sorted(training["models"].items()):
        if entry.get("status") != "ok":
            continue
        model = wd.load_model(name)
        model.train_seconds = float(entry.get("train_seconds", 0.0))
        models.append(model)
    report = comparative_report(models, valid, split_seed=manifest.get("seed"), n_train=manifest.get("train_rows"))

    wd.save_frame(artifacts.REPORT_CSV, report.to_frame())
    wd.save_json(
        REPORT_JSON,
        {
            "fingerprint": report.fingerprint,
            "accuracy_percent": {row.name: row.accuracy_percent for row in report.rows},
        },
    )
    for row in report.rows:
        wd.save_frame(artifacts.confusion_filename(row.name), row.confusion.to_frame(), index=True)

    raw = _read_input(wd.require(artifacts.CLEAN_CSV, "run ingest first"))
    _, records, _, _ = _load_records(raw, cfg.extra_features)
    yearly = figure3_frame(records)
    shares = figure4_frame(records, cfg.bins)
    wd.save_frame(artifacts.FIGURE3_CSV, yearly)
    wd.save_frame(artifacts.FIGURE4_CSV, shares)
    wd.save_bytes(artifacts.FIGURE3_SVG, render_figure3(yearly))
    wd.save_bytes(artifacts.FIGURE4_SVG, render_figure4(shares))

    print(f"{'Classifier':<24}{'Accuracy (%)':>14}")
    for row in report.rows:
        print(f"{row.name:<24}{row.accuracy_percent:>14.2f}")
    for line in published_comparisons(records, cfg.bins):
        print(line)
    return EXIT_OK


def _prediction_frame(model: TrainedModel, table: RawTable) -> pd.DataFrame:
    columns = ["row", "predicted_class"]
    if model.kind == "forest":
        columns += [f"votes_{c.name}" for c in CLASS_ORDER]
    elif model.kind == "multinomial_logistic":
        columns += [f"prob_{c.name}" for c in CLASS_ORDER]
    if table.n_rows == 0:
        return pd.DataFrame(columns=columns)

    X = encode_table_rows(table, model.feature_names, model.company_vocabulary)
    predicted = model.predict_rows(X)
    frame = pd.DataFrame(
        {"row": np.arange(1, table.n_rows + 1), "predicted_class": [CLASS_ORDER[int(p)].name for p in predicted]}
    )
    votes = model.vote_histograms(X)
    if votes is not None:
        for c in CLASS_ORDER:
            frame[f"votes_{c.name}"] = votes[:, int(c)]
    probabilities = model.probabilities(X)
    if probabilities is not None:
        for c in CLASS_ORDER:
            frame[f"prob_{c.name}"] = probabilities[:, int(c)]
    return frame[columns]


def cmd_predict(cfg: PipelineConfig, model_path: str, rows_csv: str, output: Optional[str] = None) -> int:
    model = artifacts.load_model(model_path)
    raw = _read_input(rows_csv)
    needed = []
    for name in model.feature_names:
        column = "company" if name.startswith(COMPANY_PREFIX) else name
        if column not in needed:
            needed.append(column)
    if model.company_vocabulary and "company" not in needed:
        needed.append("company")
    if raw.strip():
        table = parse_csv(raw, schema=needed)
    else:
        table = RawTable(tuple(needed), (), ())

    frame = _prediction_frame(model, table)
    target = output or Workdir(cfg.workdir).path(artifacts.PREDICTIONS_CSV)
    artifacts.save_frame(target, frame)
    print(f"Predicted {len(frame)} rows with {model.name} -> {target}")
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig, spec: SyntheticSpec, output: Optional[str] = None) -> int:
    records, dataset = generate_synthetic(spec)
    wd = Workdir(cfg.workdir)
    wd.ensure()
    target = output or wd.path(SYNTHETIC_CSV)
    artifacts.save_frame(target, records_to_frame(records))

    ready = cfg.to_dict()
    ready["input_csv"] = os.path.abspath(target)
    ready["extra_features"] = list(spec.feature_names())
    wd.save_json(SYNTHETIC_CONFIG_JSON, ready)

    print(f"Generated {len(records)} synthetic rows -> {target}")
    print("Class histogram: " + ", ".join(f"{k}={v}" for k, v in dataset.class_histogram().items()))
    print(f"Run config with planted features: {wd.path(SYNTHETIC_CONFIG_JSON)}")
    return EXIT_OK


def split_overrides(extra: Sequence[str]) -> List[Tuple[str, str]]:
    """Turn leftover ``--a.b value`` / ``--key=value`` arguments into pairs."""
    pairs = []
    i = 0
    while i < len(extra):
        token = extra[i]
        key = token[2:].split("=", 1)[0]
        if not token.startswith("--") or ("." not in key and key not in DEFAULTS):
            raise UsageError(f"unrecognized argument {token}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{token} needs a value")
            key, value = token[2:], extra[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="master seed; derives every nested seed")
    common.add_argument("--workdir", help="artifact directory")
    common.add_argument("--workers", type=int, help="tree-training threads")
    common.add_argument("--log-level", default=os.environ.get("TURNOVER_LOG_LEVEL", "WARNING"))

    parser = argparse.ArgumentParser(
        prog="turnover",
        description="Share turnover classification: Boruta feature selection, random forest and baselines.",
        epilog="Any config value can be overridden with a dotted flag, e.g. --forest.n_trees 50.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", parents=[common], help="clean, encode and split a BSE CSV")
    ingest.add_argument("--input", help="BSE share-price CSV")
    sub.add_parser("features", parents=[common], help="run Boruta on the training split")
    sub.add_parser("train", parents=[common], help="train the forest and the four baselines")
    sub.add_parser("evaluate", parents=[common], help="score models and write report and figure data")

    predict = sub.add_parser("predict", parents=[common], help="classify new rows with a saved model")
    predict.add_argument("--model", required=True, help="model_<name>.json")
    predict.add_argument("--rows", required=True, help="CSV of rows to classify")
    predict.add_argument("--output", help="predictions CSV (default: <workdir>/predictions.csv)")

    synth = sub.add_parser("synth", parents=[common], help="write a synthetic BSE-shaped dataset")
    synth.add_argument("--n-rows", type=int, default=SyntheticSpec.n_rows)
    synth.add_argument("--n-informative", type=int, default=SyntheticSpec.n_informative)
    synth.add_argument("--n-noise", type=int, default=SyntheticSpec.n_noise)
    synth.add_argument("--noise-level", type=float, default=SyntheticSpec.noise_level)
    synth.add_argument("--data-seed", type=int, default=SyntheticSpec.seed)
    synth.add_argument("--output", help="CSV path (default: <workdir>/synthetic.csv)")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    overrides = split_overrides(extra)
    if args.workdir:
        overrides.append(("workdir", args.workdir))
    if args.workers is not None:
        overrides.append(("workers", str(args.workers)))
    if getattr(args, "input", None):
        overrides.append(("input_csv", args.input))
    cfg = load_config(args.config, overrides, args.seed)

    if args.command == "ingest":
        return cmd_ingest(cfg)
    if args.command == "features":
        return cmd_features(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "evaluate":
        return cmd_evaluate(cfg)
    if args.command == "predict":
        return cmd_predict(cfg, args.model, args.rows, args.output)
    spec = SyntheticSpec(
        n_rows=args.n_rows,
        n_informative=args.n_informative,
        n_noise=args.n_noise,
        noise_level=args.noise_level,
        seed=args.data_seed,
    )
    return cmd_synth(cfg, spec, args.output)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on internal or model errors, 2 on bad input."""
    try:
        return run(argv)
    except (UsageError, MissingArtifact, SchemaError, ParseError, VocabularyError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, TrainingError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        logger.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
