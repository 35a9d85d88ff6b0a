import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import NONLINEAR_EXPR, uniform_marginals
from copula_forge.errors import TrainingError
from copula_forge.generator import DatasetSpec, generate
from copula_forge.models import (
    LogisticModel,
    MlpConfig,
    MlpModel,
    auc,
    fit_logistic,
    fit_mlp,
    init_mlp,
    load_model,
    mlp_loss_and_grads,
    mlp_parameter_count,
    predict_proba,
    save_model,
    split_indices,
    train_test_split,
)


def _bernoulli_data(n=10_000, seed=0):
    spec = DatasetSpec(
        seed=seed, n_samples=n, marginals=uniform_marginals(), expression="x_1", label_mode="bernoulli"
    )
    ds = generate(spec)
    return ds.X, ds.label


def _neg_loglik(theta, X, y):
    eta = X @ theta[:-1] + theta[-1]
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


# ---------------------------------------------------------------- logistic


def test_logistic_recovers_generating_slope():
    X, y = _bernoulli_data()
    m = fit_logistic(X, y)
    assert 10.5 <= m.coefficients[0] <= 13.5
    assert abs(m.coefficients[1]) <= 0.5
    assert m.grad_norm <= 1e-8 and not m.separable

    # independent route: quasi-Newton on the same likelihood
    ref = minimize(_neg_loglik, np.zeros(3), args=(X, y), method="BFGS", options={"gtol": 1e-9})
    np.testing.assert_allclose(m.coefficients, ref.x[:2], atol=1e-3)
    assert m.intercept == pytest.approx(ref.x[2], abs=1e-3)


def test_zero_column_gets_exactly_zero_under_penalty(rng):
    X = np.column_stack([rng.normal(size=300), np.zeros(300)])
    y = (X[:, 0] + rng.normal(scale=0.5, size=300) > 0).astype(int)
    m = fit_logistic(X, y, l2_lambda=0.1)
    assert m.coefficients[1] == 0.0


def test_zero_column_without_penalty_is_boosted(rng):
    X = np.column_stack([rng.normal(size=300), np.zeros(300)])
    y = (X[:, 0] + rng.normal(scale=0.5, size=300) > 0).astype(int)
    m = fit_logistic(X, y)
    assert m.coefficients[1] == 0.0
    assert m.l2_lambda == 1e-6


def test_flipping_labels_negates_coefficients(rng):
    X = rng.normal(size=(400, 3))
    X = np.vstack([X, -X])  # symmetric design
    y = (X @ [1.0, -0.5, 0.2] + rng.logistic(size=800) > 0).astype(int)
    a = fit_logistic(X, y)
    b = fit_logistic(X, 1 - y)
    np.testing.assert_allclose(b.coefficients, -a.coefficients, rtol=0, atol=1e-8)
    assert b.intercept == pytest.approx(-a.intercept, abs=1e-8)


def test_newton_objective_never_decreases():
    X, y = _bernoulli_data(n=2000, seed=4)
    for lam in (0.0, 1.0):
        h = fit_logistic(X, y, l2_lambda=lam).objective_history
        assert len(h) > 2
        assert all(b >= a for a, b in zip(h, h[1:]))


def test_separable_data_is_flagged():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    m = fit_logistic(X, [0, 0, 1, 1])
    assert m.separable
    assert np.all(np.isfinite(m.coefficients))


@pytest.mark.parametrize("X, y", [(np.ones((5, 1)), [1] * 5), (np.ones((2, 2)), [0, 1])])
def test_logistic_preconditions(X, y):
    with pytest.raises(TrainingError):
        fit_logistic(X, y)


def test_logistic_predict_formula(rng):
    m = LogisticModel(coefficients=np.array([1.3, -0.4]), intercept=0.25)
    X = rng.uniform(-3, 3, size=(10, 2))
    expected = [1.0 / (1.0 + math.exp(-(1.3 * a - 0.4 * b + 0.25))) for a, b in X]
    np.testing.assert_allclose(predict_proba(m, X), expected, rtol=0, atol=1e-12)
    zero = LogisticModel(coefficients=np.zeros(2), intercept=0.0)
    np.testing.assert_array_equal(zero.predict_proba(X), 0.5)


def test_dimension_mismatch():
    m = LogisticModel(coefficients=np.zeros(2), intercept=0.0)
    with pytest.raises(ValueError, match="feature columns"):
        m.predict_proba(np.zeros((3, 5)))


# ---------------------------------------------------------------- MLP


def test_parameter_count():
    assert mlp_parameter_count(2) == 251
    assert init_mlp(2, 0).n_parameters == 251
    assert init_mlp(6, 0).n_parameters == 12 * 6 + 12 + 130 + 77 + 8
    assert init_mlp(6, 0).layer_sizes == (6, 12, 10, 7, 1)


def test_glorot_bounds():
    m = init_mlp(2, 5)
    for W in m.weights:
        limit = math.sqrt(6.0 / sum(W.shape))
        assert np.max(np.abs(W)) <= limit
    assert all(np.all(b == 0) for b in m.biases)


def test_mlp_forward_by_hand():
    m = MlpModel(
        weights=[np.array([[0.5, -1.0], [0.25, 2.0]]), np.array([[1.5], [-0.75]])],
        biases=[np.array([0.1, -0.2]), np.array([0.3])],
    )
    x = np.array([0.4, -0.6])
    h1 = math.tanh(0.5 * 0.4 + 0.25 * -0.6 + 0.1)
    h2 = math.tanh(-1.0 * 0.4 + 2.0 * -0.6 - 0.2)
    z = 1.5 * h1 - 0.75 * h2 + 0.3
    assert m.predict_proba(x)[0] == pytest.approx(1.0 / (1.0 + math.exp(-z)), abs=1e-12)


def test_backprop_matches_finite_differences(rng):
    m = init_mlp(3, 7)
    for b in m.biases:  # non-zero biases so their gradients are exercised
        b += rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])
    _, gW, gb = mlp_loss_and_grads(m, X, y)
    h = 1e-6
    worst = 0.0
    for params, grads in ((m.weights, gW), (m.biases, gb)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + h
                up = mlp_loss_and_grads(m, X, y)[0]
                P[idx] = old - h
                dn = mlp_loss_and_grads(m, X, y)[0]
                P[idx] = old
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - G[idx]) / max(1e-3, abs(fd), abs(G[idx])))
    assert worst <= 1e-4


def test_mlp_learns_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    m = fit_mlp(X, y, MlpConfig(epochs=2000, learning_rate=0.1, batch_size=4, seed=1))
    np.testing.assert_array_equal((m.predict_proba(X) > 0.5).astype(int), y)


def test_untrained_mlp_is_uninformative(rng):
    X = rng.normal(size=(2000, 2))
    y = rng.integers(0, 2, size=2000)
    m = fit_mlp(X, y, MlpConfig(epochs=0))
    p = m.predict_proba(X)
    assert np.all((p > 0) & (p < 1))
    assert abs(auc(p, y) - 0.5) <= 0.1


def test_mlp_is_deterministic(rng):
    X = rng.normal(size=(100, 2))
    y = (X[:, 0] > 0).astype(int)
    cfg = MlpConfig(epochs=5, seed=3)
    a, b = fit_mlp(X, y, cfg), fit_mlp(X, y, cfg)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()


def test_mlp_single_class_rejected():
    with pytest.raises(TrainingError):
        fit_mlp(np.zeros((4, 2)), np.ones(4))


def test_mlp_divergence_is_reported(rng):
    X = rng.normal(size=(64, 2)) * 100
    y = (X[:, 0] > 0).astype(int)
    with pytest.raises(TrainingError):
        fit_mlp(X, y, MlpConfig(epochs=50, learning_rate=1e4))


@pytest.mark.slow
def test_mlp_on_nonlinear_baseline():
    spec = DatasetSpec(seed=0, n_samples=1000, marginals=uniform_marginals(), expression=NONLINEAR_EXPR, sigmoid_y0=1.0)
    train, test = train_test_split(generate(spec), 0.7, seed=0)
    m = fit_mlp(train.X, train.label)
    assert auc(m.predict_proba(test.X), test.label) >= 0.99


def test_model_round_trip(tmp_path, rng):
    X = rng.normal(size=(20, 2))
    for model in (LogisticModel(np.array([0.3, -1.1]), 0.2), init_mlp(2, 9)):
        save_model(model, tmp_path / "m.json")
        again = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(again.predict_proba(X), model.predict_proba(X))


# ---------------------------------------------------------------- metrics and splits


def _auc_by_pairs(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def test_auc_small_example():
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert _auc_by_pairs(scores, labels) == 0.75
    assert auc(scores, labels) == 0.75


def test_auc_edge_cases():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_auc_against_pair_enumeration_with_ties(rng):
    scores = rng.integers(0, 6, size=60).astype(float)
    labels = rng.integers(0, 2, size=60)
    assert auc(scores, labels) == pytest.approx(_auc_by_pairs(scores, labels), abs=1e-12)
    assert auc(np.exp(scores), labels) == auc(scores, labels)


def test_split_sizes_and_partition():
    tr, te = split_indices(1000, 0.7, seed=2)
    assert (len(tr), len(te)) == (700, 300)
    assert np.intersect1d(tr, te).size == 0
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, te])), np.arange(1000))
    tr2, te2 = split_indices(1000, 0.7, seed=2)
    np.testing.assert_array_equal(tr, tr2)
    np.testing.assert_array_equal(te, te2)


@pytest.mark.parametrize("n, fraction", [(10, 0.0), (10, 1.0), (3, 0.01)])
def test_split_rejects_empty_side(n, fraction):
    with pytest.raises(ValueError):
        split_indices(n, fraction, seed=0)


def test_dataset_split_keeps_row_index(baseline_spec):
    ds = generate(baseline_spec)
    train, test = train_test_split(ds, 0.7, seed=5)
    np.testing.assert_array_equal(train.X, ds.X[train.row_index])
    np.testing.assert_array_equal(test.label, ds.label[test.row_index])
