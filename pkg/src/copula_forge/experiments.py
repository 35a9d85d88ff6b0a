"""The three built-in experiments: generate, split, fit, attribute, compare, report."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CopulaForgeError
from .explain import (
    BackgroundSet,
    additivity_report,
    compare_attributions,
    gradient_ground_truth,
    grid,
    shapley_values,
    write_attributions,
)
from .generator import DatasetSpec, generate, write_dataset
from .models import MlpConfig, auc, fit_logistic, fit_mlp, save_model, train_test_split
from .stats import PRNG_ALGORITHM

EXPERIMENTS = {
    "logistic_1d": ("logistic_1d",),
    "correlated_informative": ("correlated_baseline", "correlated_informative"),
    "redundant_features": ("correlated_baseline", "redundant_features"),
}
TRAIN_FRACTION = 0.7
GRID_STEPS = 21

# acceptance thresholds recorded in every report
TOLERANCES = {
    "logistic_1d": {"min_auc": 0.97, "beta_1_range": [8.0, 16.0], "max_abs_beta_2": 1.0,
                    "min_shapley_ratio": 50.0},
    "correlated_informative": {"min_auc": 0.99, "min_swap_correlation": 0.9,
                               "min_base_value_gap": 0.01},
    "redundant_features": {"min_relative_residual": 0.1},
}


class StageError(CopulaForgeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def builtin_spec(name: str) -> DatasetSpec:
    text = resources.files("copula_forge.specs").joinpath(f"{name}.json").read_text("utf-8")
    return DatasetSpec.from_json(json.loads(text))


@dataclass
class ExperimentConfig:
    name: str
    out_dir: Path | None = None
    seed: int | None = None
    n_samples: int | None = None

    def specs(self) -> list[DatasetSpec]:
        if self.name not in EXPERIMENTS:
            raise CopulaForgeError(
                f"unknown experiment {self.name!r}; choose from {sorted(EXPERIMENTS)}"
            )
        out = []
        for spec_name in EXPERIMENTS[self.name]:
            spec = builtin_spec(spec_name)
            if self.seed is not None:
                spec = spec.replace(seed=self.seed)
            if self.n_samples is not None:
                spec = spec.replace(n_samples=self.n_samples)
            out.append(spec)
        return out


class _Stages:
    """Runs named stages, timing each and tagging failures with the stage name."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0


def _header(cfg: ExperimentConfig, specs: list[DatasetSpec]) -> dict:
    return {
        "experiment": cfg.name,
        "version": __version__,
        "prng_algorithm": PRNG_ALGORITHM,
        "seeds": [s.seed for s in specs],
        "spec_digests": [s.digest() for s in specs],
        "specs": [s.to_json() for s in specs],
        "train_fraction": TRAIN_FRACTION,
        "tolerances": TOLERANCES[cfg.name],
    }


def _mlp_config(spec: DatasetSpec) -> MlpConfig:
    return MlpConfig(seed=spec.seed)


def run_logistic_1d(cfg: ExperimentConfig) -> dict:
    (spec,) = cfg.specs()
    st = _Stages()
    ds = st.run("generate", generate, spec)
    train, test = st.run("split", train_test_split, ds, TRAIN_FRACTION, spec.seed)
    model = st.run("fit", fit_logistic, train.X, train.label)
    test_auc = st.run("evaluate", auc, model.predict_proba(test.X), test.label)
    bg = BackgroundSet(train.X, "training split of logistic_1d")
    on_train = st.run("attribute", shapley_values, model, train.X, bg, ds.column_names)
    G = grid(steps=GRID_STEPS)
    on_grid = st.run("attribute-grid", shapley_values, model, G, bg, ds.column_names)
    truth = st.run("ground-truth", gradient_ground_truth, spec, G)
    mean_abs = on_train.mean_abs()

    report = _header(cfg, [spec])
    report.update(
        {
            "n_train": train.n,
            "n_test": test.n,
            "auc": test_auc,
            "coefficients": model.coefficients.tolist(),
            "intercept": model.intercept,
            "separable": model.separable,
            "newton_iterations": model.iterations,
            "base_value": on_train.base_value,
            "mean_abs_phi": mean_abs.tolist(),
            "shapley_ratio": float(mean_abs[0] / mean_abs[1]),
        }
    )
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        write_dataset(ds, out / "dataset.csv")
        save_model(model, out / "model.json")
        write_attributions(on_train, out / "shapley_train.csv", X=train.X)
        write_attributions(on_grid, out / "shapley_grid.csv", X=G)
        write_attributions(truth, out / "ground_truth_grid.csv", X=G)
    report["timings"] = st.timings
    return report


def run_correlated_informative(cfg: ExperimentConfig) -> dict:
    base_spec, corr_spec = cfg.specs()
    st = _Stages()
    fitted = {}
    for tag, spec in (("baseline", base_spec), ("correlated", corr_spec)):
        ds = st.run(f"generate-{tag}", generate, spec)
        train, test = st.run(f"split-{tag}", train_test_split, ds, TRAIN_FRACTION, spec.seed)
        model = st.run(f"fit-{tag}", fit_mlp, train.X, train.label, _mlp_config(spec))
        score = st.run(f"evaluate-{tag}", auc, model.predict_proba(test.X), test.label)
        fitted[tag] = (ds, train, model, score)

    G = grid(steps=GRID_STEPS)
    bg_base = BackgroundSet(fitted["baseline"][1].X, "training split of correlated_baseline")
    bg_corr = BackgroundSet(fitted["correlated"][1].X, "training split of correlated_informative")
    names = fitted["baseline"][0].column_names
    runs = {
        "baseline_model_baseline_bg": (fitted["baseline"][2], bg_base),
        "correlated_model_correlated_bg": (fitted["correlated"][2], bg_corr),
        "correlated_model_baseline_bg": (fitted["correlated"][2], bg_base),
    }
    attrs = {
        key: st.run(f"attribute-{key}", shapley_values, model, G, bg, names)
        for key, (model, bg) in runs.items()
    }
    a = attrs["baseline_model_baseline_bg"]
    b = attrs["correlated_model_correlated_bg"]
    c = attrs["correlated_model_baseline_bg"]
    swap = compare_attributions(c, a)
    naive = compare_attributions(b, a)

    report = _header(cfg, [base_spec, corr_spec])
    report.update(
        {
            "auc_baseline": fitted["baseline"][3],
            "auc_correlated": fitted["correlated"][3],
            "label_mean_baseline": float(fitted["baseline"][0].label.mean()),
            "label_mean_correlated": float(fitted["correlated"][0].label.mean()),
            "mlp_parameters": fitted["baseline"][2].n_parameters,
            "base_values": {k: v.base_value for k, v in attrs.items()},
            "base_value_gap": abs(b.base_value - c.base_value),
            "swap_correlation": swap["correlation"],
            "naive_correlation": naive["correlation"],
            "comparison_swap": swap,
            "comparison_naive": naive,
            "mean_abs_phi": {k: v.mean_abs().tolist() for k, v in attrs.items()},
        }
    )
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        for tag, (ds, _, model, _) in fitted.items():
            write_dataset(ds, out / f"dataset_{tag}.csv")
            save_model(model, out / f"model_{tag}.json")
        for key, attr in attrs.items():
            write_attributions(attr, out / f"shapley_{key}.csv", X=G)
    report["timings"] = st.timings
    return report


def run_redundant_features(cfg: ExperimentConfig) -> dict:
    base_spec, red_spec = cfg.specs()
    st = _Stages()
    base = st.run("generate-baseline", generate, base_spec)
    full = st.run("generate-redundant", generate, red_spec)
    b_train, b_test = st.run("split-baseline", train_test_split, base, TRAIN_FRACTION, base_spec.seed)
    f_train, f_test = st.run("split-redundant", train_test_split, full, TRAIN_FRACTION, red_spec.seed)
    if not np.array_equal(b_test.row_index, f_test.row_index):
        raise StageError("split-redundant", CopulaForgeError("train/test split differs from baseline"))
    m_base = st.run("fit-baseline", fit_mlp, b_train.X, b_train.label, _mlp_config(base_spec))
    m_full = st.run("fit-redundant", fit_mlp, f_train.X, f_train.label, _mlp_config(red_spec))
    auc_base = st.run("evaluate-baseline", auc, m_base.predict_proba(b_test.X), b_test.label)
    auc_full = st.run("evaluate-redundant", auc, m_full.predict_proba(f_test.X), f_test.label)

    phi_base = st.run(
        "attribute-baseline", shapley_values, m_base, b_test.X,
        BackgroundSet(b_train.X, "training split of correlated_baseline"), base.column_names,
    )
    phi_full = st.run(
        "attribute-redundant", shapley_values, m_full, f_test.X,
        BackgroundSet(f_train.X, "training split of redundant_features"), full.column_names,
    )
    add = st.run("compare", additivity_report, phi_full, full.partition, full.redundant_weights, phi_base)
    n0, n1 = full.partition["nuisance"]
    i0, i1 = full.partition["informative"]
    mean_abs = phi_full.mean_abs()

    report = _header(cfg, [base_spec, red_spec])
    report.update(
        {
            "auc_baseline": auc_base,
            "auc_redundant": auc_full,
            "mlp_parameters": {"baseline": m_base.n_parameters, "redundant": m_full.n_parameters},
            "partition": full.partition,
            "redundant_weights": full.redundant_weights.tolist(),
            "additivity_residual": add["additivity_residual"],
            "relative_residual": add["relative_residual"],
            "additivity": add,
            "mean_abs_phi": dict(zip(full.column_names, mean_abs.tolist())),
            "nuisance_below_informative": bool(
                mean_abs[n0:n1].max() < mean_abs[i0:i1].min() and mean_abs[n0:n1].min() > 0
            ),
        }
    )
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        write_dataset(base, out / "dataset_baseline.csv")
        write_dataset(full, out / "dataset_redundant.csv")
        save_model(m_base, out / "model_baseline.json")
        save_model(m_full, out / "model_redundant.json")
        write_attributions(phi_base, out / "shapley_baseline_test.csv", X=b_test.X)
        write_attributions(phi_full, out / "shapley_redundant_test.csv", X=f_test.X)
    report["timings"] = st.timings
    return report


RUNNERS = {
    "logistic_1d": run_logistic_1d,
    "correlated_informative": run_correlated_informative,
    "redundant_features": run_redundant_features,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run a built-in experiment; writes ``report.json`` when ``out_dir`` is set.

    Stage timings are returned under ``timings`` but left out of the file so
    that reruns produce identical reports.
    """
    if cfg.name not in RUNNERS:
        raise CopulaForgeError(f"unknown experiment {cfg.name!r}; choose from {sorted(RUNNERS)}")
    if cfg.out_dir is not None:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    report = RUNNERS[cfg.name](cfg)
    if cfg.out_dir is not None:
        path = Path(cfg.out_dir) / "report.json"
        stable = {k: v for k, v in report.items() if k != "timings"}
        path.write_text(json.dumps(stable, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
