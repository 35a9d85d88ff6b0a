"""Exact interventional Shapley values, ground-truth gradients, and comparisons."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CopulaForgeError
from .exprlang import differentiate, evaluate, parse_expression
from .generator import DatasetSpec, apply_sigmoid

MAX_SHAPLEY_FEATURES = 20
THREADS_ENV = "COPULA_FORGE_THREADS"


@dataclass
class BackgroundSet:
    rows: np.ndarray
    source: str = "unspecified"

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        if self.rows.shape[0] < 1:
            raise ValueError("background set needs at least one row")


@dataclass
class AttributionMatrix:
    values: np.ndarray
    base_value: float
    background_id: str
    method: str
    feature_names: list[str] = field(default_factory=list)

    def mean_abs(self) -> np.ndarray:
        return np.mean(np.abs(self.values), axis=0)


def _predictor(model):
    return model.predict_proba if hasattr(model, "predict_proba") else model


def _coalition_weights(d: int) -> np.ndarray:
    # weight for a coalition of size s that excludes the feature
    return np.array(
        [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    )


def _shapley_chunk(f, X: np.ndarray, bg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, d = X.shape
    m = bg.shape[0]
    n_coal = 1 << d
    v = np.empty((n_coal, n))
    for mask in range(n_coal):
        keep = np.array([(mask >> j) & 1 for j in range(d)], dtype=bool)
        mixed = np.where(keep, X[:, None, :], bg[None, :, :]).reshape(n * m, d)
        v[mask] = np.asarray(f(mixed), dtype=np.float64).reshape(n, m).mean(axis=1)
    w = _coalition_weights(d)
    phi = np.zeros((n, d))
    for i in range(d):
        bit = 1 << i
        for mask in range(n_coal):
            if mask & bit:
                continue
            phi[:, i] += w[bin(mask).count("1")] * (v[mask | bit] - v[mask])
    return phi, v[0]


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def shapley_values(
    model, X, background: BackgroundSet, feature_names=None, chunk_evals: int = 250_000,
) -> AttributionMatrix:
    """Exact interventional Shapley values for every row of ``X``.

    The value of a coalition S at x is the model output averaged over the
    background rows with the features in S fixed to x. All ``2^d``
    coalitions are evaluated once per row chunk.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    bg = background.rows
    n, d = X.shape
    if bg.shape[1] != d:
        raise ValueError(f"background has {bg.shape[1]} columns, data has {d}")
    if d > MAX_SHAPLEY_FEATURES:
        raise ValueError(f"exact Shapley limited to {MAX_SHAPLEY_FEATURES} features, got {d}")
    f = _predictor(model)
    rows_per_chunk = max(1, chunk_evals // bg.shape[0])
    chunks = [X[s : s + rows_per_chunk] for s in range(0, max(n, 1), rows_per_chunk)]
    threads = _thread_count()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda c: _shapley_chunk(f, c, bg), chunks))
    else:
        results = [_shapley_chunk(f, c, bg) for c in chunks]
    phi = np.vstack([r[0] for r in results]) if n else np.empty((0, d))
    base = float(np.mean(np.asarray(f(bg), dtype=np.float64)))
    return AttributionMatrix(phi, base, background.source, "exact_shapley", list(feature_names or []))


def exact_shapley(model, x, background: BackgroundSet) -> tuple[np.ndarray, float]:
    """Shapley values of a single instance; returns ``(phi, base_value)``."""
    attr = shapley_values(model, np.asarray(x, dtype=np.float64)[None, :], background)
    return attr.values[0], attr.base_value


def gradient_ground_truth(spec: DatasetSpec, X, feature_names=None) -> AttributionMatrix:
    """Gradient of the true probability ``h_k(f(x))`` at each row.

    Informative columns get ``h'(f) * df/dx_j``; any further columns
    (redundant, nuisance) are exactly zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    names = spec.informative_names
    d_i = len(names)
    if X.shape[1] < d_i:
        raise ValueError(f"need at least {d_i} columns, got {X.shape[1]}")
    ast = parse_expression(spec.expression)
    bindings = {name: X[:, j] for j, name in enumerate(names)}
    f_val = evaluate(ast, bindings)
    h = apply_sigmoid(f_val, spec.sigmoid_k, spec.sigmoid_y0)
    dh = spec.sigmoid_k * h * (1.0 - h)
    values = np.zeros_like(X)
    for j, name in enumerate(names):
        values[:, j] = dh * evaluate(differentiate(ast, name), bindings)
    return AttributionMatrix(
        values, float(np.mean(h)), "ground_truth", "gradient_ground_truth",
        list(feature_names or spec.column_names),
    )


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    sa, sb = np.std(a), np.std(b)
    if sa == 0 or sb == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def compare_attributions(a: AttributionMatrix, b: AttributionMatrix, columns=None) -> dict:
    """Per-feature agreement between two attribution matrices over the same rows.

    ``columns`` selects the columns of ``a`` that line up with ``b``'s
    columns when their widths differ.
    """
    va = a.values if columns is None else a.values[:, list(columns)]
    vb = b.values
    if va.shape != vb.shape:
        raise ValueError(f"attribution shapes differ: {va.shape} vs {vb.shape}")
    return {
        "correlation": [_pearson(va[:, j], vb[:, j]) for j in range(vb.shape[1])],
        "mean_abs_a": np.mean(np.abs(va), axis=0).tolist(),
        "mean_abs_b": np.mean(np.abs(vb), axis=0).tolist(),
        "mean_abs_difference": np.mean(np.abs(va - vb), axis=0).tolist(),
        "base_value_a": a.base_value,
        "base_value_b": b.base_value,
        "background_a": a.background_id,
        "background_b": b.background_id,
    }


def additivity_report(full: AttributionMatrix, partition: dict, weights, baseline: AttributionMatrix) -> dict:
    """Fold redundant-column attributions back onto informative columns and
    compare the sum with a baseline model's informative attributions.

    Redundant column k is ``sum_j W[j, k] x_j``, so its attribution is
    distributed as ``phi_r @ W.T``.
    """
    i0, i1 = partition["informative"]
    r0, r1 = partition["redundant"]
    n0, n1 = partition["nuisance"]
    W = np.asarray(weights, dtype=np.float64)
    phi_inf = full.values[:, i0:i1]
    phi_red = full.values[:, r0:r1]
    combined = phi_inf + (phi_red @ W.T if r1 > r0 else 0.0)
    residual = combined - baseline.values
    base_norm = float(np.linalg.norm(baseline.values))
    res_norm = float(np.linalg.norm(residual))
    return {
        "additivity_residual": res_norm,
        "baseline_norm": base_norm,
        "relative_residual": res_norm / base_norm if base_norm else float("inf"),
        "per_feature_mean_abs_residual": np.mean(np.abs(residual), axis=0).tolist(),
        "mean_abs_informative": np.mean(np.abs(phi_inf), axis=0).tolist(),
        "mean_abs_redundant": np.mean(np.abs(phi_red), axis=0).tolist(),
        "mean_abs_nuisance": np.mean(np.abs(full.values[:, n0:n1]), axis=0).tolist(),
        "mean_abs_baseline": np.mean(np.abs(baseline.values), axis=0).tolist(),
    }


def grid(lo: float = -1.0, hi: float = 1.0, steps: int = 21) -> np.ndarray:
    """Row-major grid over the square [lo, hi]^2."""
    axis = np.linspace(lo, hi, steps)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def write_attributions(attr: AttributionMatrix, csv_path, names=None, X=None) -> tuple[Path, Path]:
    """Attribution CSV (optionally preceded by the evaluated inputs) and a JSON header."""
    csv_path = Path(csv_path)
    names = list(names or attr.feature_names or [f"f_{j + 1}" for j in range(attr.values.shape[1])])
    header = [f"phi_{n}" for n in names]
    block = attr.values
    if X is not None:
        header = names + header
        block = np.hstack([np.asarray(X, dtype=np.float64), block])
    lines = [",".join(header)]
    lines += [",".join(f"{v:.17g}" for v in row) for row in block]
    stem = csv_path.name[:-4] if csv_path.name.endswith(".csv") else csv_path.name
    json_path = csv_path.with_name(f"{stem}.json")
    try:
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        json_path.write_text(
            json.dumps(
                {
                    "base_value": attr.base_value,
                    "background_id": attr.background_id,
                    "method": attr.method,
                    "features": names,
                    "n_rows": int(attr.values.shape[0]),
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise CopulaForgeError(f"cannot write {exc.filename}: {exc.strerror}") from exc
    return csv_path, json_path
