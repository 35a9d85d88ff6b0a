import math
import random

import numpy as np
import pytest
from hypothesis import strategies as st

from copula_forge.copula import MarginalSpec
from copula_forge.exprlang import FUNCTIONS, Binary, Const, Unary, Var
from copula_forge.generator import DatasetSpec

VARS = ("x_1", "x_2", "x_3")
NONLINEAR_EXPR = "cos(x_1^2 * pi/180) - sin(x_2 * pi/180) + x_1*x_2"


def _leaf():
    return st.one_of(
        st.sampled_from([Var(v) for v in VARS]),
        st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Const),
        st.just(Const(math.pi, "pi")),
    )


def _grow(children):
    return st.one_of(
        st.tuples(st.sampled_from(("neg",) + FUNCTIONS), children).map(lambda t: Unary(*t)),
        st.tuples(st.sampled_from(("add", "sub", "mul", "div", "pow")), children, children).map(
            lambda t: Binary(*t)
        ),
    )


# trees of depth <= 8 (each extend adds one level)
ast_nodes = st.recursive(_leaf(), _grow, max_leaves=40).filter(lambda n: _depth(n) <= 8)


def _depth(node):
    if isinstance(node, Unary):
        return 1 + _depth(node.arg)
    if isinstance(node, Binary):
        return 1 + max(_depth(node.left), _depth(node.right))
    return 1


def smooth_ast(rng: random.Random, depth: int):
    """Random tree that is smooth and bounded on [-1, 1]^3: no log, and
    division only by ``2 + cos(.)``."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.7:
            return Var(rng.choice(VARS))
        return Const(round(rng.uniform(0.1, 2.0), 3))
    kind = rng.choice(["add", "sub", "mul", "neg", "sin", "cos", "exp", "pow", "div"])
    sub = smooth_ast(rng, depth - 1)
    if kind in ("neg", "sin", "cos"):
        return Unary(kind, sub)
    if kind == "exp":
        return Unary("exp", Unary("sin", sub))
    if kind == "pow":
        return Binary("pow", sub, Const(float(rng.choice([2, 3]))))
    if kind == "div":
        return Binary("div", sub, Binary("add", Const(2.0), Unary("cos", smooth_ast(rng, depth - 1))))
    return Binary(kind, sub, smooth_ast(rng, depth - 1))


def uniform_marginals(d=2):
    return [MarginalSpec(f"x_{i + 1}", "uniform", {"lo": -1.0, "hi": 1.0}) for i in range(d)]


def gaussian_marginals(d=2, sd=1.0):
    return [MarginalSpec(f"x_{i + 1}", "gaussian", {"mean": 0.0, "sd": sd}) for i in range(d)]


@pytest.fixture
def baseline_spec():
    return DatasetSpec(
        seed=11, n_samples=1000, marginals=uniform_marginals(), expression=NONLINEAR_EXPR, sigmoid_y0=1.0
    )


@pytest.fixture
def logistic_spec():
    return DatasetSpec(seed=3, n_samples=1000, marginals=gaussian_marginals(), expression="x_1")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
