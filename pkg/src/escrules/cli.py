"""Command-line interface.

    escrules synth --out-dir run/
    escrules train --features run/data.csv --out-dir run/
    escrules evaluate --model run/model.json --test run/test.csv --train run/train.csv --out-dir run/
    escrules explain --model run/model.json --features run/test.csv --row 0
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .evaluation import (EvalReport, SyntheticSpec, absolute_errors, active_rule_count,
                         generate_synthetic, ridge_baseline)
from .explain import explain_prediction, render_text, rule_base_text
from .features import (BinarizationSpec, FeatureMatrix, apply_spec, read_feature_csv,
                       read_raw_csv, write_feature_csv)
from .loss import LossConfig
from .model import RuleModel, predict_batch
from .ontology import ConstraintSet, OntologyError, literal_pairs, load_ontology, precomplete
from .trainer import Dataset, TrainConfig, TrainingHistory, split_indices, train

logger = logging.getLogger("escrules")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def build_train_config(args, config: dict) -> TrainConfig:
    train_kw = dict(config.get("train", {}))
    loss_kw = dict(train_kw.pop("loss", {}))
    loss_kw.update(config.get("loss", {}))
    overrides = {
        "m_rules": args.rules, "learning_rate": args.lr, "min_epochs": args.min_epochs,
        "max_epochs": args.max_epochs, "patience": args.patience, "batch_size": args.batch_size,
    }
    train_kw.update({k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        train_kw["seed"] = args.seed
    loss_overrides = {"alpha_max": args.alpha_max, "base_loss": args.base_loss, "theta": args.theta}
    loss_kw.update({k: v for k, v in loss_overrides.items() if v is not None})
    return TrainConfig(loss=LossConfig(**loss_kw), **train_kw)


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _align(matrix: FeatureMatrix, names: list[str]) -> np.ndarray:
    missing = [n for n in names if n not in matrix.names]
    if missing:
        raise UsageError(f"feature CSV lacks model column(s): {missing[:5]}")
    index = {n: j for j, n in enumerate(matrix.names)}
    return matrix.values[:, [index[n] for n in names]]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_binarize(args, config):
    _require(args.input, args.spec)
    raw, ids = read_raw_csv(args.input, args.id_column)
    targets = raw.pop(args.target).to_numpy(dtype=float) if args.target in raw.columns else None
    matrix = apply_spec(raw, BinarizationSpec.load(args.spec), ids)
    write_feature_csv(matrix, args.output, targets, args.target)
    print(f"{matrix.shape[0]} rows x {matrix.shape[1]} features -> {args.output}")


def _feature_names(meta_path) -> list[str]:
    meta = json.loads(Path(meta_path).read_text())
    if isinstance(meta, list):
        return [m["name"] if isinstance(m, dict) else str(m) for m in meta]
    raise UsageError("column meta must be a JSON list")


def cmd_constraints(args, config):
    _require(args.ontology, args.meta)
    doc = load_ontology(args.ontology)
    names = _feature_names(args.meta)
    cs = literal_pairs(doc, names, contrapositive=args.contrapositive, transitive=not args.direct_only)
    n = len(names)
    unbound = sum(1 for c in doc.bindings if c not in names)
    summary = {"features": n, "implications": len(cs.implications),
               "exclusions": len(cs.exclusions), "contradiction_pairs": n,
               "ontology_exclusions": len(cs.exclusions) - n, "unbound_bindings": unbound}
    if args.action == "compile":
        if not args.output:
            raise UsageError("constraints compile needs --output")
        Path(args.output).write_text(json.dumps({
            "n": n, "implications": sorted(map(list, cs.implications)),
            "exclusions": sorted(map(list, cs.exclusions))}, indent=1) + "\n")
    print(" ".join(f"{k}={v}" for k, v in summary.items()))


def _load_dataset(args) -> Dataset:
    if args.features:
        _require(args.features)
        matrix, y = read_feature_csv(args.features, args.target)
    elif args.input and args.spec:
        _require(args.input, args.spec)
        raw, ids = read_raw_csv(args.input, args.id_column)
        if args.target not in raw.columns:
            raise UsageError(f"target column {args.target!r} not in {args.input}")
        y = raw.pop(args.target).to_numpy(dtype=float)
        matrix = apply_spec(raw, BinarizationSpec.load(args.spec), ids)
    else:
        raise UsageError("train needs --features, or --input together with --spec")
    if y is None:
        raise UsageError(f"target column {args.target!r} not found")
    return Dataset(matrix, y)


def cmd_train(args, config):
    _require(args.ontology)
    cfg = build_train_config(args, config)
    dataset = _load_dataset(args)
    constraints = ConstraintSet.contradictions_only(dataset.features.shape[1])
    if args.ontology:
        doc = load_ontology(args.ontology)
        dataset = Dataset(precomplete(dataset.features, doc), dataset.targets)
        constraints = literal_pairs(doc, dataset.features.names, contrapositive=args.contrapositive)
    parts = split_indices(len(dataset), cfg.split_ratios, cfg.seed)
    train_set, val_set, test_set = (dataset.take(p) for p in parts)
    model, history = train((train_set, val_set), cfg, constraints)

    out = _out_dir(args)
    model.save(out / "model.json")
    history.to_csv(out / "history.csv")
    for name, part in (("train", train_set), ("val", val_set), ("test", test_set)):
        write_feature_csv(part.features, out / f"{name}.csv", part.targets, args.target)
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    display = config.get("explain", {}).get("display_threshold", 0.25)
    (out / "rules.txt").write_text(rule_base_text(model, display))
    if not args.no_plots:
        from .plotting import training_curves
        training_curves(history, out / "training.png")
    print(f"trained {model.m} rules on {len(train_set)} rows; epochs={len(history)} "
          f"best_epoch={history.best_epoch} stop={history.stop_reason} -> {out / 'model.json'}")


def cmd_predict(args, config):
    _require(args.model, args.features)
    model = RuleModel.load(args.model)
    matrix, _ = read_feature_csv(args.features, args.target)
    preds = predict_batch(model, _align(matrix, model.feature_names))
    out = pd.DataFrame({"row_id": matrix.row_ids, "prediction": preds})
    out.to_csv(args.output, index=False, float_format="%.10g")
    print(f"{len(preds)} predictions -> {args.output}")


def _select_row(matrix: FeatureMatrix, row: str | None, index: int | None) -> int:
    if index is not None:
        if not 0 <= index < matrix.shape[0]:
            raise UsageError(f"row index {index} out of range")
        return index
    if row is None:
        return 0
    for i, rid in enumerate(matrix.row_ids):
        if str(rid) == str(row):
            return i
    raise UsageError(f"row id {row!r} not found")


def cmd_explain(args, config):
    _require(args.model, args.features)
    model = RuleModel.load(args.model)
    matrix, _ = read_feature_csv(args.features, args.target)
    X = _align(matrix, model.feature_names)
    i = _select_row(matrix, args.row, args.index)
    ex_cfg = config.get("explain", {})
    display = args.display_threshold if args.display_threshold is not None else ex_cfg.get("display_threshold", 0.25)
    contrib = (args.contribution_threshold if args.contribution_threshold is not None
               else ex_cfg.get("contribution_threshold", 0.01))
    explanation = explain_prediction(model, X[i], display, contrib)
    sys.stdout.write(render_text(explanation))
    if args.json:
        doc = {"row_id": matrix.row_ids[i], **explanation.to_dict()}
        Path(args.json).write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _labelled(spec: str) -> tuple[str, str]:
    if "=" in spec:
        label, path = spec.split("=", 1)
        return label, path
    return Path(spec).stem, spec


def cmd_evaluate(args, config):
    models = [_labelled(s) for s in args.model]
    externals = [_labelled(s) for s in args.external]
    _require(args.test, args.train, args.history, *[p for _, p in models + externals])
    test_matrix, y = read_feature_csv(args.test, args.target)
    if y is None:
        raise UsageError(f"target column {args.target!r} missing from {args.test}")
    report = EvalReport()
    for label, path in models:
        model = RuleModel.load(path)
        X = _align(test_matrix, model.feature_names)
        report.add(absolute_errors(predict_batch(model, X), y, label, test_matrix.row_ids))
        report.rule_counts[label] = active_rule_count(model, X, args.contribution_threshold)
    if args.train:
        train_matrix, y_train = read_feature_csv(args.train, args.target)
        X_test = _align(test_matrix, train_matrix.names)
        report.add(ridge_baseline(Dataset(train_matrix, y_train),
                                  Dataset(FeatureMatrix(X_test, list(train_matrix.columns),
                                                        list(test_matrix.row_ids)), y),
                                  args.ridge_lambda))
    truth = dict(zip(map(str, test_matrix.row_ids), y))
    for label, path in externals:
        ext = pd.read_csv(path)
        ids = ext["row_id"].astype(str).tolist()
        unknown = [i for i in ids if i not in truth]
        if unknown:
            raise UsageError(f"{path}: unknown row ids {unknown[:5]}")
        report.add(absolute_errors(ext["prediction"].to_numpy(float), [truth[i] for i in ids], label, ids))

    out = _out_dir(args)
    report.write(out / "report.json", out / "errors.csv")
    if not args.no_plots and report.entries:
        from .plotting import error_boxplot, rule_count_bars, training_curves
        error_boxplot(report, out / "errors.png")
        if report.rule_counts:
            rule_count_bars(report.rule_counts, out / "rule_counts.png")
        if args.history:
            history = TrainingHistory.from_csv(args.history)
            training_curves(history, out / "training.png")
    for e in report.entries:
        s = e.stats
        print(f"{e.label}: mean={s['mean']:.4f} median={s['median']:.4f} max={s['max']:.4f} n={s['n']}")


def cmd_synth(args, config):
    spec_kw = dict(config.get("synth", {}))
    if args.spec:
        _require(args.spec)
        spec = SyntheticSpec(**json.loads(Path(args.spec).read_text()))
    else:
        seed = args.seed if args.seed is not None else spec_kw.pop("seed", 0)
        spec_kw.update({k: v for k, v in {"n_features": args.n_features, "n_rows": args.n_rows,
                                          "noise_std": args.noise}.items() if v is not None})
        n_rules = spec_kw.pop("n_rules", args.n_rules)
        spec = SyntheticSpec.random(seed, n_rules=n_rules, **spec_kw)
    dataset, truth = generate_synthetic(spec)
    out = _out_dir(args)
    write_feature_csv(dataset.features, out / "data.csv", dataset.targets, args.target)
    truth.save(out / "truth.json")
    (out / "synthetic_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"{len(dataset)} rows, {spec.n_features} features, {len(spec.planted_rules)} planted rules -> {out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not overwrite values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=d(None), help="JSON run configuration")
        p.add_argument("--seed", type=int, default=d(None))
        p.add_argument("--out-dir", default=d("."))
        p.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return p

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="escrules", parents=[global_flags(suppress=False)],
                                     description="Semantically constrained fuzzy rule learning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("binarize", parents=[common], help="raw CSV -> fuzzy feature CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target", default="target")
    p.add_argument("--id-column", default="row_id")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("constraints", parents=[common], help="validate or compile an ontology")
    p.add_argument("action", choices=["validate", "compile"])
    p.add_argument("--ontology", required=True)
    p.add_argument("--meta", required=True, help="column meta JSON written next to a feature CSV")
    p.add_argument("--output")
    p.add_argument("--contrapositive", action="store_true")
    p.add_argument("--direct-only", action="store_true", help="skip transitive closure")
    p.set_defaults(func=cmd_constraints)

    p = sub.add_parser("train", parents=[common], help="train a rule model")
    p.add_argument("--features")
    p.add_argument("--input")
    p.add_argument("--spec")
    p.add_argument("--ontology")
    p.add_argument("--contrapositive", action="store_true")
    p.add_argument("--target", default="target")
    p.add_argument("--id-column", default="row_id")
    p.add_argument("--rules", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--min-epochs", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--base-loss", choices=["bce", "mse"])
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict from a feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target", default="target", help="column to ignore if present")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", parents=[common], help="explain one prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--target", default="target")
    p.add_argument("--row", help="row id")
    p.add_argument("--index", type=int, help="0-based row position")
    p.add_argument("--display-threshold", type=float)
    p.add_argument("--contribution-threshold", type=float)
    p.add_argument("--json", help="also write the explanation as JSON here")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", parents=[common], help="absolute-error report")
    p.add_argument("--model", action="append", default=[], help="[label=]model.json, repeatable")
    p.add_argument("--test", required=True)
    p.add_argument("--train", help="training CSV for the ridge baseline")
    p.add_argument("--external", action="append", default=[], help="[label=]predictions.csv")
    p.add_argument("--history", help="history.csv to plot")
    p.add_argument("--target", default="target")
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--contribution-threshold", type=float, default=0.01)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common], help="planted-rule synthetic dataset")
    p.add_argument("--spec", help="SyntheticSpec JSON; random planted rules otherwise")
    p.add_argument("--n-features", type=int)
    p.add_argument("--n-rows", type=int)
    p.add_argument("--n-rules", type=int, default=5)
    p.add_argument("--noise", type=float)
    p.add_argument("--target", default="target")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        args.func(args, config)
    except (ValueError, OntologyError, FileNotFoundError, KeyError, FloatingPointError,
            RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else exc!r}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
