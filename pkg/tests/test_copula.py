import math

import numpy as np
import pytest
from scipy import stats as sps

from copula_forge.copula import (
    CopulaSpec,
    MarginalSpec,
    marginal_cdf,
    marginal_quantile,
    sample_informative,
)
from copula_forge.errors import NotPositiveDefiniteError
from copula_forge.stats import Prng, std_normal_quantile

RHO = np.array([[1.0, 0.5], [0.5, 1.0]])
KS_CRIT = 1.628  # alpha = 0.01, asymptotic

MARGINALS = {
    "uniform": MarginalSpec("x", "uniform", {"lo": -1.0, "hi": 1.0}),
    "gaussian": MarginalSpec("x", "gaussian", {"mean": 0.5, "sd": 2.0}),
    "exponential": MarginalSpec("x", "exponential", {"rate": 2.0}),
}


def _spec(kind, R):
    base = MARGINALS[kind]
    ms = tuple(MarginalSpec(f"x_{i + 1}", base.kind, base.params) for i in range(len(R)))
    return CopulaSpec(ms, np.asarray(R, dtype=float))


def test_quantile_closed_forms():
    assert marginal_quantile(MARGINALS["uniform"], 0.5) == 0.0
    assert marginal_quantile(MarginalSpec("x", "gaussian", {"mean": 0.0, "sd": 1.0}), 0.5) == 0.0
    assert marginal_quantile(MARGINALS["exponential"], 1 - math.exp(-2)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("kind", sorted(MARGINALS))
def test_quantile_monotone_and_inverts_cdf(kind):
    m = MARGINALS[kind]
    u = np.linspace(1e-6, 1 - 1e-6, 5001)
    q = marginal_quantile(m, u)
    assert np.all(np.diff(q) > 0)
    np.testing.assert_allclose(marginal_cdf(m, q), u, atol=1e-12)


@pytest.mark.parametrize("u", [0.0, 1.0, 1.2])
def test_quantile_domain(u):
    with pytest.raises(ValueError):
        marginal_quantile(MARGINALS["uniform"], u)


def test_independent_gaussian_columns(rng):
    n = 10_000
    spec = CopulaSpec(
        tuple(MarginalSpec(f"x_{i}", "gaussian", {"mean": 0.0, "sd": 1.0}) for i in (1, 2)), np.eye(2)
    )
    X = sample_informative(spec, n, Prng(1))
    assert np.all(np.abs(X.mean(axis=0)) <= 4 / math.sqrt(n))
    assert abs(np.corrcoef(X.T)[0, 1]) <= 0.05


def test_gaussian_marginals_keep_pearson():
    spec = CopulaSpec(
        tuple(MarginalSpec(f"x_{i}", "gaussian", {"mean": 0.0, "sd": 1.0}) for i in (1, 2)), RHO
    )
    X = sample_informative(spec, 10_000, Prng(2))
    assert abs(np.corrcoef(X.T)[0, 1] - 0.5) <= 0.05


def test_uniform_spearman_identity():
    expected = 6 / math.pi * math.asin(0.25)
    X = sample_informative(_spec("uniform", RHO), 100_000, Prng(3))
    rho_s = sps.spearmanr(X[:, 0], X[:, 1]).statistic
    assert abs(rho_s - expected) <= 0.02


@pytest.mark.parametrize("kind", sorted(MARGINALS))
def test_marginal_fidelity_ks(kind):
    n = 10_000
    X = sample_informative(_spec(kind, RHO), n, Prng(4))
    m = MARGINALS[kind]
    for j in range(2):
        D = sps.kstest(X[:, j], lambda x: marginal_cdf(m, x)).statistic
        assert D <= KS_CRIT / math.sqrt(n)


@pytest.mark.parametrize("kind", sorted(MARGINALS))
def test_latent_correlation_recovered(kind):
    R = np.array([[1.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 1.0]])
    n = 10_000
    X = sample_informative(_spec(kind, R), n, Prng(5))
    m = MARGINALS[kind]
    U = np.clip(marginal_cdf(m, X), 1e-15, 1 - 1e-15)
    Z = std_normal_quantile(U)
    assert np.max(np.abs(np.corrcoef(Z.T) - R)) <= 0.05


def test_empty_sample():
    assert sample_informative(_spec("uniform", RHO), 0, Prng(1)).shape == (0, 2)


def test_not_positive_definite_propagates():
    R = np.array([[1.0, 0.0, 0.9], [0.0, 1.0, 0.9], [0.9, 0.9, 1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        sample_informative(_spec("uniform", R), 10, Prng(1))


@pytest.mark.parametrize(
    "m, fragment",
    [
        (MarginalSpec("a", "uniform", {"lo": 1.0, "hi": 1.0}), "lo < hi"),
        (MarginalSpec("a", "gaussian", {"mean": 0.0, "sd": 0.0}), "sd > 0"),
        (MarginalSpec("a", "exponential", {"rate": -1.0}), "rate > 0"),
        (MarginalSpec("a", "beta", {}), "unknown kind"),
        (MarginalSpec("a", "uniform", {"lo": 0.0}), "needs params"),
    ],
)
def test_marginal_problems(m, fragment):
    assert any(fragment in p for p in m.problems())
