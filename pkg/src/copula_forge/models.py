"""Baseline classifiers (Newton/IRLS logistic regression, small tanh MLP) and metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import rankdata

from .errors import CopulaForgeError, TrainingError
from .stats import Prng, draw_uniform

MLP_HIDDEN = (12, 10, 7)


# ---------------------------------------------------------------- logistic regression


@dataclass
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    iterations: int = 0
    grad_norm: float = 0.0
    l2_lambda: float = 0.0
    separable: bool = False
    objective_history: list[float] = field(default_factory=list)

    kind = "logistic"

    @property
    def n_features(self) -> int:
        return len(self.coefficients)

    def predict_proba(self, X) -> np.ndarray:
        X = _check_dim(X, self.n_features)
        return expit(X @ self.coefficients + self.intercept)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "diagnostics": {
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
                "l2_lambda": self.l2_lambda,
                "separable": self.separable,
            },
        }


def _penalized_loglik(A, y, theta, lam_vec):
    eta = A @ theta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(lam_vec * theta**2))


def fit_logistic(
    X, y, l2_lambda: float = 0.0, tol: float = 1e-8, max_iter: int = 100,
    separation_norm: float = 1e4,
) -> LogisticModel:
    """Maximise ``sum log-lik - l2_lambda/2 * ||beta||^2`` by damped Newton steps.

    The intercept is not penalised. A singular Hessian is retried once with
    the penalty raised to 1e-6. When the coefficient norm passes
    ``separation_norm`` the fit stops and the model is flagged ``separable``;
    the flag is also raised for an unpenalised fit whose scores split the two
    classes perfectly.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if len(np.unique(y)) < 2:
        raise TrainingError("labels contain a single class")
    if n < d + 1:
        raise TrainingError(f"need at least {d + 1} rows, got {n}")
    A = np.hstack([X, np.ones((n, 1))])
    lam = float(l2_lambda)

    def penalty(lam):
        return np.append(np.full(d, lam), 0.0)

    theta = np.zeros(d + 1)
    lam_vec = penalty(lam)
    obj = _penalized_loglik(A, y, theta, lam_vec)
    history = [obj]
    separable = False
    it = 0
    grad = A.T @ (y - expit(A @ theta)) - lam_vec * theta
    while it < max_iter and np.max(np.abs(grad)) > tol:
        p = expit(A @ theta)
        w = p * (1.0 - p)
        H = (A * w[:, None]).T @ A + np.diag(lam_vec)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            if lam >= 1e-6:
                raise TrainingError("Hessian is singular even with l2_lambda >= 1e-6") from None
            lam = 1e-6
            lam_vec = penalty(lam)
            obj = _penalized_loglik(A, y, theta, lam_vec)
            history.append(obj)
            grad = A.T @ (y - p) - lam_vec * theta
            continue
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            cand_obj = _penalized_loglik(A, y, cand, lam_vec)
            if cand_obj >= obj:
                break
            t *= 0.5
        else:
            break  # no ascent left at machine precision
        theta, obj = cand, cand_obj
        history.append(obj)
        it += 1
        grad = A.T @ (y - expit(A @ theta)) - lam_vec * theta
        if np.linalg.norm(theta[:d]) > separation_norm:
            separable = True
            break

    if not separable and lam == 0.0:
        # With separated classes the gradient decays like exp(-||beta||), so
        # Newton meets the tolerance long before the norm threshold. An
        # unpenalised fit that orders every positive above every negative has
        # no finite maximiser.
        eta = A @ theta
        pos = y == 1
        separable = bool(eta[pos].min() > eta[~pos].max())

    return LogisticModel(
        coefficients=theta[:d].copy(),
        intercept=float(theta[d]),
        iterations=it,
        grad_norm=float(np.max(np.abs(grad))),
        l2_lambda=lam,
        separable=separable,
        objective_history=history,
    )


# ---------------------------------------------------------------- MLP


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss_history: list[float] = field(default_factory=list)
    epochs: int = 0

    kind = "mlp"

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def logit(self, X) -> np.ndarray:
        h = _check_dim(X, self.n_features)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.logit(X))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "diagnostics": {"epochs": self.epochs, "loss_history": self.loss_history},
        }


def mlp_parameter_count(d_in: int, hidden=MLP_HIDDEN) -> int:
    sizes = (d_in, *hidden, 1)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def init_mlp(d_in: int, seed: int, hidden=MLP_HIDDEN) -> MlpModel:
    """Glorot-uniform weights from the ``mlp-init`` sub-stream, zero biases."""
    prng = Prng(seed).substream("mlp-init")
    sizes = (d_in, *hidden, 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        u = draw_uniform(prng, fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append(limit * (2.0 * u - 1.0))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def _bce(logit, y) -> float:
    return float(-np.mean(y * log_expit(logit) + (1.0 - y) * log_expit(-logit)))


def mlp_loss_and_grads(model: MlpModel, X, y):
    """Mean binary cross-entropy and its gradients by backpropagation."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    acts = [X]
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    logit = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    loss = _bce(logit, y)

    delta = ((expit(logit) - y) / len(y))[:, None]
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        gW[layer] = acts[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ model.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return loss, gW, gb


@dataclass
class MlpConfig:
    epochs: int = 300
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9
    hidden: tuple[int, ...] = MLP_HIDDEN


def fit_mlp(X, y, config: MlpConfig | None = None) -> MlpModel:
    """Mini-batch SGD with momentum on mean binary cross-entropy.

    Deterministic given ``config.seed``: initial weights and the per-epoch
    shuffles come from separate sub-streams of that seed.
    """
    cfg = config or MlpConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise TrainingError("labels contain a single class")
    n = len(y)
    model = init_mlp(X.shape[1], cfg.seed, cfg.hidden)
    shuffle = Prng(cfg.seed).substream("mlp-shuffle")
    vW = [np.zeros_like(w) for w in model.weights]
    vb = [np.zeros_like(b) for b in model.biases]

    initial = _bce(model.logit(X), y)
    history = []
    bad_epochs = 0
    for epoch in range(cfg.epochs):
        order = np.argsort(draw_uniform(shuffle, n), kind="stable")
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, gW, gb = mlp_loss_and_grads(model, X[idx], y[idx])
            for i in range(len(model.weights)):
                vW[i] = cfg.momentum * vW[i] - cfg.learning_rate * gW[i]
                vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * gb[i]
                model.weights[i] += vW[i]
                model.biases[i] += vb[i]
        loss = _bce(model.logit(X), y)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        history.append(loss)
        bad_epochs = bad_epochs + 1 if loss > 10.0 * initial else 0
        if bad_epochs >= 5:
            raise TrainingError(f"training diverged at epoch {epoch} (loss {loss:.3g})")
    model.loss_history = history
    model.epochs = cfg.epochs
    return model


# ---------------------------------------------------------------- shared


def _check_dim(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"model expects {d} feature columns, got shape {X.shape}")
    return X


def predict_proba(model, X) -> np.ndarray:
    return model.predict_proba(X)


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, indent=2)
        fh.write("\n")


def model_from_json(data: dict):
    kind = data.get("kind")
    if kind == "logistic":
        diag = data.get("diagnostics", {})
        return LogisticModel(
            coefficients=np.asarray(data["coefficients"], dtype=np.float64),
            intercept=float(data["intercept"]),
            iterations=diag.get("iterations", 0),
            grad_norm=diag.get("grad_norm", 0.0),
            l2_lambda=diag.get("l2_lambda", 0.0),
            separable=diag.get("separable", False),
        )
    if kind == "mlp":
        diag = data.get("diagnostics", {})
        return MlpModel(
            weights=[np.asarray(w, dtype=np.float64) for w in data["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in data["biases"]],
            loss_history=list(diag.get("loss_history", [])),
            epochs=diag.get("epochs", 0),
        )
    raise CopulaForgeError(f"unknown model kind {kind!r}")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney statistic, ties counted as half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {fraction} leaves one side empty")
    order = np.argsort(draw_uniform(Prng(seed).substream("split"), n), kind="stable")
    return order[:n_train], order[n_train:]


def train_test_split(ds, fraction: float, seed: int):
    """Seeded shuffle-and-split of a dataset; each side keeps ``row_index``."""
    train_idx, test_idx = split_indices(ds.n, fraction, seed)
    return ds.take(train_idx), ds.take(test_idx)
