"""Command-line entry point.

Exit codes: 0 success, 1 runtime or I/O failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .errors import CopulaForgeError, SpecValidationError
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .explain import BackgroundSet, shapley_values, write_attributions
from .generator import generate, load_spec, read_features, read_table, validate_spec, write_dataset
from .models import MlpConfig, fit_logistic, fit_mlp, load_model, save_model

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load_valid_spec(path, seed=None):
    """Returns the spec, or None after printing every validation error."""
    try:
        spec = load_spec(path)
    except SpecValidationError as exc:
        for e in exc.errors:
            _err(e)
        return None
    except json.JSONDecodeError as exc:
        _err(f"{path}: invalid JSON ({exc})")
        return None
    if seed is not None:
        spec = spec.replace(seed=seed)
    errs = validate_spec(spec)
    for e in errs:
        _err(e)
    return None if errs else spec


def cmd_validate(args) -> int:
    try:
        spec = _load_valid_spec(args.spec)
    except OSError as exc:
        _err(f"cannot read {args.spec}: {exc.strerror}")
        return EXIT_RUNTIME
    if spec is None:
        return EXIT_INVALID
    print(f"{args.spec}: ok")
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        spec = _load_valid_spec(args.spec, args.seed)
    except OSError as exc:
        _err(f"cannot read {args.spec}: {exc.strerror}")
        return EXIT_RUNTIME
    if spec is None:
        return EXIT_INVALID
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            ds = generate(spec)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        csv_path, meta_path = write_dataset(ds, out)
    except (CopulaForgeError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"wrote {csv_path} and {meta_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        names, data = read_table(args.data)
        if "label" not in names:
            _err(f"{args.data} has no label column")
            return EXIT_INVALID
        _, X = read_features(args.data)
        y = data[:, names.index("label")]
        if args.model_kind == "logistic":
            model = fit_logistic(X, y, l2_lambda=args.l2)
        else:
            model = fit_mlp(X, y, MlpConfig(seed=args.seed or 0, epochs=args.epochs))
        save_model(model, args.out)
    except (CopulaForgeError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    try:
        model = load_model(args.model)
        names, X = read_features(args.data)
        _, bg = read_features(args.background)
    except (CopulaForgeError, OSError, ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    d = model.n_features
    if X.shape[1] != d or bg.shape[1] != d:
        _err(f"model expects {d} features; data has {X.shape[1]}, background has {bg.shape[1]}")
        return EXIT_INVALID
    if bg.shape[0] == 0:
        _err("background file has no rows")
        return EXIT_INVALID
    try:
        attr = shapley_values(model, X, BackgroundSet(bg, str(args.background)), names)
        csv_path, json_path = write_attributions(attr, args.out, names)
    except (CopulaForgeError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"wrote {csv_path} and {json_path} (base_value={attr.base_value:.6g})")
    return EXIT_OK


def _summary(report: dict) -> str:
    keys = (
        "auc", "coefficients", "shapley_ratio", "auc_baseline", "auc_correlated",
        "auc_redundant", "swap_correlation", "base_value_gap", "relative_residual",
        "nuisance_below_informative",
    )
    lines = [f"experiment {report['experiment']} (seeds {report['seeds']})"]
    for k in keys:
        if k in report:
            v = report[k]
            if isinstance(v, list):
                v = "[" + ", ".join(f"{x:.4g}" for x in v) + "]"
            elif isinstance(v, float):
                v = f"{v:.4g}"
            lines.append(f"  {k}: {v}")
    return "\n".join(lines)


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig(args.name, Path(args.out) if args.out else None, args.seed, args.n_samples)
    try:
        report = run_experiment(cfg)
    except CopulaForgeError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(_summary(report))
    if args.out:
        print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copula-forge",
        description="Synthetic tabular data with known ground truth, and exact Shapley explanations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset spec and list every problem")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="generate a dataset CSV and its .meta.json sidecar")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True, help="CSV path; metadata goes next to it")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a baseline model on a generated CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-kind", choices=("logistic", "mlp"), default="logistic")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, default=MlpConfig.epochs)
    p.add_argument("--l2", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="exact Shapley values of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--background", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("experiment", help="run one of the built-in experiments")
    p.add_argument("--name", required=True, choices=sorted(EXPERIMENTS))
    p.add_argument("--out", help="directory for report.json, CSVs and models")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-samples", type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
