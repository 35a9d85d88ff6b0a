"""Gaussian-copula sampling of the informative features.

Correlation is specified on the latent normal scale.  With non-Gaussian
marginals the observed Pearson/Spearman correlation of the output columns
differs from the latent entries (for uniform marginals Spearman equals
``(6/pi) * asin(rho/2)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .stats import Prng, cholesky, draw_normal, std_normal_cdf, std_normal_quantile

MARGINAL_KINDS = {
    "uniform": ("lo", "hi"),
    "gaussian": ("mean", "sd"),
    "exponential": ("rate",),
}
COPULA_FAMILIES = ("gaussian",)


@dataclass(frozen=True)
class MarginalSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def problems(self) -> list[str]:
        if self.kind not in MARGINAL_KINDS:
            return [f"marginal {self.name}: unknown kind {self.kind!r}"]
        expected = set(MARGINAL_KINDS[self.kind])
        got = set(self.params)
        errs = []
        if got != expected:
            errs.append(
                f"marginal {self.name}: {self.kind} needs params {sorted(expected)}, got {sorted(got)}"
            )
            return errs
        try:
            p = {k: float(v) for k, v in self.params.items()}
        except (TypeError, ValueError):
            return [f"marginal {self.name}: parameters must be numbers"]
        if not all(math.isfinite(v) for v in p.values()):
            errs.append(f"marginal {self.name}: non-finite parameter")
        elif self.kind == "uniform" and not p["lo"] < p["hi"]:
            errs.append(f"marginal {self.name}: uniform needs lo < hi")
        elif self.kind == "gaussian" and not p["sd"] > 0:
            errs.append(f"marginal {self.name}: gaussian needs sd > 0")
        elif self.kind == "exponential" and not p["rate"] > 0:
            errs.append(f"marginal {self.name}: exponential needs rate > 0")
        return errs

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": dict(self.params)}


def marginal_quantile(m: MarginalSpec, u):
    u = np.asarray(u, dtype=np.float64)
    if not np.all((u > 0.0) & (u < 1.0)):
        raise ValueError("marginal_quantile requires 0 < u < 1")
    p = m.params
    if m.kind == "uniform":
        out = p["lo"] + (p["hi"] - p["lo"]) * u
    elif m.kind == "gaussian":
        out = p["mean"] + p["sd"] * np.asarray(std_normal_quantile(u))
    elif m.kind == "exponential":
        out = -np.log1p(-u) / p["rate"]
    else:
        raise ValueError(f"unknown marginal kind {m.kind!r}")
    return float(out) if np.ndim(out) == 0 else out


def marginal_cdf(m: MarginalSpec, x):
    """Analytic CDF, the counterpart of :func:`marginal_quantile`."""
    x = np.asarray(x, dtype=np.float64)
    p = m.params
    if m.kind == "uniform":
        return np.clip((x - p["lo"]) / (p["hi"] - p["lo"]), 0.0, 1.0)
    if m.kind == "gaussian":
        return std_normal_cdf((x - p["mean"]) / p["sd"])
    if m.kind == "exponential":
        return np.where(x > 0, -np.expm1(-p["rate"] * np.maximum(x, 0.0)), 0.0)
    raise ValueError(f"unknown marginal kind {m.kind!r}")


@dataclass(frozen=True)
class CopulaSpec:
    marginals: tuple[MarginalSpec, ...]
    correlation: np.ndarray
    family: str = "gaussian"

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.marginals]

    @property
    def dim(self) -> int:
        return len(self.marginals)


def sample_latent(spec: CopulaSpec, n: int, prng: Prng) -> np.ndarray:
    """Correlated standard normals ``z = L g``, one row per sample."""
    d = spec.dim
    L = cholesky(spec.correlation).lower
    g = draw_normal(prng, n * d).reshape(n, d)
    return g @ L.T


def sample_informative(spec: CopulaSpec, n: int, prng: Prng) -> np.ndarray:
    if spec.family != "gaussian":
        raise ValueError(f"unsupported copula family {spec.family!r}")
    if n == 0:
        return np.empty((0, spec.dim))
    z = sample_latent(spec, n, prng)
    u = std_normal_cdf(z)
    # keep u strictly inside (0, 1) when z saturates Phi
    u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    cols = [marginal_quantile(m, u[:, j]) for j, m in enumerate(spec.marginals)]
    return np.column_stack(cols)
