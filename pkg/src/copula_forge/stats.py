"""Deterministic numerical kernels: seeded streams, normal CDF/quantile, Cholesky."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import NotPositiveDefiniteError

PRNG_ALGORITHM = "PCG64 via numpy SeedSequence(seed, sha256(label)); uniform = ((u64 >> 11) + 0.5) * 2^-53"

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class Prng:
    """Seeded 64-bit generator with named sub-streams.

    ``Prng(seed).substream("nuisance")`` depends only on the seed and the label
    path, never on how many values other streams consumed.
    """

    algorithm = PRNG_ALGORITHM

    def __init__(self, seed: int, label: str = ""):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self.label = label
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, *_label_words(label)]
        self._bitgen = np.random.PCG64(np.random.SeedSequence(entropy))

    def substream(self, label: str) -> "Prng":
        path = f"{self.label}/{label}" if self.label else label
        return Prng(self.seed, path)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n).astype(np.uint64)

    def __repr__(self):
        return f"Prng(seed={self.seed}, label={self.label!r})"


def draw_uniform(prng: Prng, n: int) -> np.ndarray:
    """``n`` uniforms strictly inside (0, 1) built from 53 bits of each raw draw."""
    raw = prng.raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def draw_normal(prng: Prng, n: int) -> np.ndarray:
    # one uniform per variate, by inverse CDF
    return std_normal_quantile(draw_uniform(prng, n))


def std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def std_normal_cdf(x):
    """Standard normal CDF as ``erfc(-x/sqrt 2)/2``.

    erfc (Cody's rational Chebyshev approximations, through scipy) keeps full
    relative precision in the lower tail, where ``(1 + erf)/2`` would cancel.
    """
    out = 0.5 * erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def _upper_tail(x):
    return 0.5 * erfc(x / _SQRT2)


# Acklam's rational approximation, |relative error| < 1.15e-9 before refinement
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = np.sqrt(-2.0 * np.log(p[lo]))
    x[lo] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    )
    q = np.sqrt(-2.0 * np.log1p(-p[hi]))
    x[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    )
    q = p[mid] - 0.5
    r = q * q
    x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )
    return x


def std_normal_quantile(p):
    """Inverse standard normal CDF.

    Acklam's rational approximation followed by one Newton step on the CDF;
    the residual is taken on the upper tail for p > 0.5 so it does not cancel.
    Raises ``ValueError`` for p outside (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    flat = np.atleast_1d(arr).ravel()
    x = _acklam(flat)
    upper = flat > 0.5
    resid = np.where(upper, (1.0 - flat) - _upper_tail(x), 0.5 * erfc(-x / _SQRT2) - flat)
    x = x - resid / std_normal_pdf(x)
    x = x.reshape(arr.shape)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class CorrelationFactor:
    lower: np.ndarray
    jittered: bool = False

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def _cholesky_once(a: np.ndarray) -> np.ndarray | int:
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return j
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky(matrix, jitter: float = 1e-10, symmetry_tol: float = 1e-12) -> CorrelationFactor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    A failed factorisation is retried once with ``jitter`` added to the
    diagonal. A second failure raises :class:`NotPositiveDefiniteError`
    with the pivot index.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > symmetry_tol:
        raise ValueError("matrix is not symmetric")
    result = _cholesky_once(a)
    if not isinstance(result, int):
        return CorrelationFactor(result)
    result = _cholesky_once(a + jitter * np.eye(a.shape[0]))
    if isinstance(result, int):
        raise NotPositiveDefiniteError(result)
    return CorrelationFactor(result, jittered=True)
