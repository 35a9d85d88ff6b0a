"""Dataset pipeline: copula features, label function, sigmoid, labels, extras, files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import __version__
from .copula import COPULA_FAMILIES, CopulaSpec, MarginalSpec, sample_informative
from .errors import (
    CopulaForgeError,
    DifferentiationError,
    ExpressionError,
    NotPositiveDefiniteError,
    SpecValidationError,
)
from .exprlang import differentiate, evaluate, parse_expression, print_expression
from .stats import PRNG_ALGORITHM, Prng, cholesky, draw_normal, draw_uniform

LABEL_MODES = ("threshold", "bernoulli")

_REQUIRED_KEYS = {"seed", "n_samples", "marginals", "expression"}
_OPTIONAL_KEYS = {
    "correlation", "sigmoid", "threshold", "label_mode", "redundant", "nuisance",
    "noise_sd", "copula", "comment",
}
_NESTED_KEYS = {
    "sigmoid": {"k", "y0"},
    "redundant": {"count", "weights"},
    "nuisance": {"count"},
}


@dataclass
class DatasetSpec:
    seed: int
    n_samples: int
    marginals: list[MarginalSpec]
    expression: str
    correlation: np.ndarray | None = None
    sigmoid_k: float = 12.0
    sigmoid_y0: float = 0.0
    threshold: float = 0.5
    label_mode: str = "threshold"
    n_redundant: int = 0
    redundant_weights: np.ndarray | None = None
    n_nuisance: int = 0
    noise_sd: float = 0.0
    copula_family: str = "gaussian"
    comment: str | None = None

    def __post_init__(self):
        if self.correlation is None:
            self.correlation = np.eye(len(self.marginals))
        self.correlation = np.asarray(self.correlation, dtype=np.float64)
        if self.redundant_weights is not None:
            self.redundant_weights = np.asarray(self.redundant_weights, dtype=np.float64)

    @property
    def informative_names(self) -> list[str]:
        return [m.name for m in self.marginals]

    @property
    def column_names(self) -> list[str]:
        return (
            self.informative_names
            + [f"r_{i + 1}" for i in range(self.n_redundant)]
            + [f"n_{i + 1}" for i in range(self.n_nuisance)]
        )

    @property
    def copula(self) -> CopulaSpec:
        return CopulaSpec(tuple(self.marginals), self.correlation, self.copula_family)

    def replace(self, **changes) -> "DatasetSpec":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_json(cls, data: dict) -> "DatasetSpec":
        """Build a spec from its JSON form. Unknown or missing keys raise
        :class:`SpecValidationError` listing all of them."""
        if not isinstance(data, dict):
            raise SpecValidationError(["spec must be a JSON object"])
        errs = []
        for key in sorted(set(data) - _REQUIRED_KEYS - _OPTIONAL_KEYS):
            errs.append(f"unknown key {key!r}")
        for key in sorted(_REQUIRED_KEYS - set(data)):
            errs.append(f"missing key {key!r}")
        for key, allowed in _NESTED_KEYS.items():
            sub = data.get(key, {})
            if not isinstance(sub, dict):
                errs.append(f"{key} must be an object")
                continue
            for k in sorted(set(sub) - allowed):
                errs.append(f"unknown key {key}.{k!r}")
        marginals = []
        for i, m in enumerate(data.get("marginals", [])):
            if not isinstance(m, dict) or set(m) - {"name", "kind", "params"} or "name" not in m:
                errs.append(f"marginals[{i}] must be an object with name, kind, params")
                continue
            marginals.append(MarginalSpec(m["name"], m.get("kind", ""), dict(m.get("params", {}))))
        if errs:
            raise SpecValidationError(errs)
        sigmoid = data.get("sigmoid", {})
        redundant = data.get("redundant", {})
        try:
            return cls(
                seed=int(data["seed"]),
                n_samples=int(data["n_samples"]),
                marginals=marginals,
                expression=str(data["expression"]),
                correlation=data.get("correlation"),
                sigmoid_k=float(sigmoid.get("k", 12.0)),
                sigmoid_y0=float(sigmoid.get("y0", 0.0)),
                threshold=float(data.get("threshold", 0.5)),
                label_mode=str(data.get("label_mode", "threshold")),
                n_redundant=int(redundant.get("count", 0)),
                redundant_weights=redundant.get("weights"),
                n_nuisance=int(data.get("nuisance", {}).get("count", 0)),
                noise_sd=float(data.get("noise_sd", 0.0)),
                copula_family=str(data.get("copula", "gaussian")),
                comment=data.get("comment"),
            )
        except (TypeError, ValueError) as exc:
            raise SpecValidationError([f"malformed value: {exc}"]) from None

    def to_json(self) -> dict:
        out = {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "marginals": [m.to_json() for m in self.marginals],
            "correlation": self.correlation.tolist(),
            "expression": self.expression,
            "sigmoid": {"k": self.sigmoid_k, "y0": self.sigmoid_y0},
            "threshold": self.threshold,
            "label_mode": self.label_mode,
            "redundant": {"count": self.n_redundant},
            "nuisance": {"count": self.n_nuisance},
            "noise_sd": self.noise_sd,
            "copula": self.copula_family,
        }
        if self.redundant_weights is not None:
            out["redundant"]["weights"] = self.redundant_weights.tolist()
        if self.comment is not None:
            out["comment"] = self.comment
        return out

    def digest(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def load_spec(path) -> DatasetSpec:
    with open(path, encoding="utf-8") as fh:
        return DatasetSpec.from_json(json.load(fh))


def validate_spec(spec: DatasetSpec) -> list[str]:
    """Every problem with ``spec``; an empty list means it is valid."""
    errs: list[str] = []
    if not 0 <= spec.seed < 2**64:
        errs.append("seed must be in [0, 2^64)")
    if spec.n_samples < 0:
        errs.append("n_samples must be >= 0")
    d = len(spec.marginals)
    if d == 0:
        errs.append("at least one marginal is required")
    names = spec.informative_names
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        errs.append(f"duplicate marginal names {dupes}")
    for m in spec.marginals:
        errs.extend(m.problems())
    if spec.copula_family not in COPULA_FAMILIES:
        errs.append(f"unsupported copula family {spec.copula_family!r}")

    R = spec.correlation
    if R.shape != (d, d):
        errs.append(f"correlation must be {d}x{d}, got shape {R.shape}")
    elif not np.all(np.isfinite(R)):
        errs.append("correlation has non-finite entries")
    else:
        if np.any(np.diag(R) != 1.0):
            errs.append("correlation diagonal must be 1")
        if np.any(np.abs(R) > 1.0):
            errs.append("correlation entry out of range [-1, 1]")
        if np.max(np.abs(R - R.T), initial=0.0) > 1e-12:
            errs.append("correlation is not symmetric")
        else:
            try:
                cholesky(R)
            except NotPositiveDefiniteError as exc:
                errs.append(f"correlation is not positive definite (pivot {exc.pivot})")

    try:
        ast = parse_expression(spec.expression)
    except ExpressionError as exc:
        errs.append(f"expression: {exc}")
    else:
        for v in ast.variables:
            if v not in names:
                errs.append(f"unknown feature {v}")

    if not (spec.sigmoid_k > 0 and math.isfinite(spec.sigmoid_k)):
        errs.append("sigmoid.k must be > 0")
    if not math.isfinite(spec.sigmoid_y0):
        errs.append("sigmoid.y0 must be finite")
    if not 0.0 < spec.threshold < 1.0:
        errs.append("threshold must be in (0, 1)")
    if spec.label_mode not in LABEL_MODES:
        errs.append(f"label_mode must be one of {LABEL_MODES}")
    if spec.n_redundant < 0:
        errs.append("redundant.count must be >= 0")
    if spec.redundant_weights is not None and spec.redundant_weights.shape != (d, spec.n_redundant):
        errs.append(
            f"redundant.weights must be {d}x{spec.n_redundant}, got shape {spec.redundant_weights.shape}"
        )
    if spec.n_nuisance < 0:
        errs.append("nuisance.count must be >= 0")
    if not (spec.noise_sd >= 0 and math.isfinite(spec.noise_sd)):
        errs.append("noise_sd must be >= 0")
    return errs


def apply_sigmoid(y_reg, k: float, y0: float):
    """``1 / (1 + exp(-k (y_reg - y0)))``, saturating to exactly 0 or 1."""
    return expit(k * (np.asarray(y_reg, dtype=np.float64) - y0))


def make_redundant(informative: np.ndarray, n_r: int, weights=None, prng: Prng | None = None):
    """Random linear combinations of the informative columns.

    Returns ``(redundant, weights_used, weights_raw)``. Drawn weights are
    uniform(-1, 1) with each column scaled to unit L2 norm; explicit weights
    are used unchanged.
    """
    n, d = informative.shape
    if weights is None:
        if prng is None:
            raise ValueError("a prng is required when weights are not given")
        raw = 2.0 * draw_uniform(prng, d * n_r).reshape(d, n_r) - 1.0
        W = raw / np.linalg.norm(raw, axis=0, keepdims=True) if n_r else raw
    else:
        raw = np.asarray(weights, dtype=np.float64)
        if raw.shape != (d, n_r):
            raise ValueError(f"redundant weights must be {d}x{n_r}, got {raw.shape}")
        W = raw
    return informative @ W, W, raw


@dataclass
class GeneratedDataset:
    informative: np.ndarray
    informative_clean: np.ndarray
    redundant: np.ndarray
    nuisance: np.ndarray
    y_reg: np.ndarray
    probability: np.ndarray
    label: np.ndarray
    column_names: list[str]
    redundant_weights: np.ndarray
    redundant_weights_raw: np.ndarray
    spec: DatasetSpec
    row_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.row_index is None:
            self.row_index = np.arange(len(self.label))

    @property
    def X(self) -> np.ndarray:
        """Feature matrix in column order informative | redundant | nuisance."""
        return np.hstack([self.informative, self.redundant, self.nuisance])

    @property
    def n(self) -> int:
        return len(self.label)

    @property
    def partition(self) -> dict[str, list[int]]:
        a = self.informative.shape[1]
        b = a + self.redundant.shape[1]
        c = b + self.nuisance.shape[1]
        return {"informative": [0, a], "redundant": [a, b], "nuisance": [b, c]}

    def take(self, idx) -> "GeneratedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return GeneratedDataset(
            informative=self.informative[idx],
            informative_clean=self.informative_clean[idx],
            redundant=self.redundant[idx],
            nuisance=self.nuisance[idx],
            y_reg=self.y_reg[idx],
            probability=self.probability[idx],
            label=self.label[idx],
            column_names=list(self.column_names),
            redundant_weights=self.redundant_weights,
            redundant_weights_raw=self.redundant_weights_raw,
            spec=self.spec,
            row_index=self.row_index[idx],
        )

    def provenance(self) -> dict:
        return {
            "generator_version": __version__,
            "prng_algorithm": PRNG_ALGORITHM,
            "spec": self.spec.to_json(),
            "spec_digest": self.spec.digest(),
        }


def generate(spec: DatasetSpec) -> GeneratedDataset:
    """Run the full pipeline for ``spec``.

    Raises :class:`SpecValidationError` for an invalid spec and
    :class:`NonFiniteError` (with the row index) if the label function is
    undefined somewhere on the sample.
    """
    errs = validate_spec(spec)
    if errs:
        raise SpecValidationError(errs)
    root = Prng(spec.seed)
    n = spec.n_samples
    d = len(spec.marginals)

    clean = sample_informative(spec.copula, n, root.substream("informative"))
    ast = parse_expression(spec.expression)
    bindings = {name: clean[:, j] for j, name in enumerate(spec.informative_names)}
    if n == 0:
        y_reg = np.empty(0)
    else:
        y_reg = evaluate(ast, bindings)
    prob = apply_sigmoid(y_reg, spec.sigmoid_k, spec.sigmoid_y0)

    if spec.label_mode == "threshold":
        label = (prob > spec.threshold).astype(np.int64)
    else:
        label = (draw_uniform(root.substream("bernoulli"), n) < prob).astype(np.int64)
    if n and label.min() == label.max():
        warnings.warn(f"all {n} labels are {label[0]}; dataset is degenerate", stacklevel=2)

    redundant, W, W_raw = make_redundant(
        clean, spec.n_redundant, spec.redundant_weights, root.substream("redundant-weights")
    )
    nuisance = 2.0 * draw_uniform(root.substream("nuisance"), n * spec.n_nuisance).reshape(
        n, spec.n_nuisance
    ) - 1.0

    released = clean
    if spec.noise_sd > 0:
        noise = draw_normal(root.substream("noise"), n * d).reshape(n, d)
        released = clean + spec.noise_sd * noise

    return GeneratedDataset(
        informative=released,
        informative_clean=clean,
        redundant=redundant,
        nuisance=nuisance,
        y_reg=y_reg,
        probability=prob,
        label=label,
        column_names=spec.column_names,
        redundant_weights=W,
        redundant_weights_raw=W_raw,
        spec=spec,
    )


def ground_truth_derivatives(spec: DatasetSpec) -> dict[str, str]:
    ast = parse_expression(spec.expression)
    out = {}
    for name in spec.informative_names:
        try:
            out[name] = print_expression(differentiate(ast, name))
        except DifferentiationError as exc:
            out[name] = f"unsupported: {exc}"
    return out


# ---------------------------------------------------------------- files

CSV_TAIL = ["y_reg", "prob", "label"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def meta_path_for(csv_path) -> Path:
    p = Path(csv_path)
    stem = p.name[:-4] if p.name.endswith(".csv") else p.name
    return p.with_name(f"{stem}.meta.json")


def write_dataset(ds: GeneratedDataset, csv_path) -> tuple[Path, Path]:
    """Write ``<name>.csv`` and the ``<name>.meta.json`` sidecar."""
    csv_path = Path(csv_path)
    meta_path = meta_path_for(csv_path)
    X = ds.X
    lines = [",".join(ds.column_names + CSV_TAIL)]
    for i in range(ds.n):
        row = [_fmt(v) for v in X[i]]
        row += [_fmt(ds.y_reg[i]), _fmt(ds.probability[i]), str(int(ds.label[i]))]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"

    meta = ds.provenance()
    meta.update(
        {
            "n_rows": ds.n,
            "columns": ds.column_names + CSV_TAIL,
            "partition": ds.partition,
            "expression_canonical": print_expression(parse_expression(ds.spec.expression)),
            "ground_truth_derivatives": ground_truth_derivatives(ds.spec),
            "redundant_weights": ds.redundant_weights.tolist(),
            "redundant_weights_raw": ds.redundant_weights_raw.tolist(),
            "label_counts": {
                "0": int(np.sum(ds.label == 0)),
                "1": int(np.sum(ds.label == 1)),
            },
        }
    )
    try:
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise CopulaForgeError(f"cannot write {exc.filename}: {exc.strerror}") from exc
    return csv_path, meta_path


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a header + float CSV as written by this package."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise CopulaForgeError(f"{path}: empty file")
        names = header.split(",")
        rows = [line.split(",") for line in fh.read().splitlines() if line]
    data = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(names)))
    if data.shape[1] != len(names):
        raise CopulaForgeError(f"{path}: ragged rows")
    return names, data


def read_features(path) -> tuple[list[str], np.ndarray]:
    """Feature columns only; drops y_reg/prob/label when present."""
    names, data = read_table(path)
    keep = [i for i, n in enumerate(names) if n not in CSV_TAIL]
    return [names[i] for i in keep], data[:, keep]
