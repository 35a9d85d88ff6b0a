"""Small expression language for label functions.

Grammar (lowest to highest precedence)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?          # right associative
    primary := NUMBER | "pi" | IDENT | FUNC "(" expr ")" | "(" expr ")"

Functions: cos, sin, exp, log, abs.  ``pi`` is the only built-in constant.
Evaluation works on floats or on numpy arrays (one value per row), which is
how the generator evaluates a whole column at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import (
    DifferentiationError,
    ExpressionSyntaxError,
    NonFiniteError,
    UnboundVariableError,
)

FUNCTIONS = ("cos", "sin", "exp", "log", "abs")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_OP_OF = {v: k for k, v in _SYMBOL.items()}


@dataclass(frozen=True)
class Const:
    value: float
    symbol: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.value) or math.copysign(1.0, self.value) < 0:
            raise ValueError(f"constants must be finite and non-negative, got {self.value!r}")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]


def _collect_vars(node: Node, out: dict[str, None]) -> None:
    if isinstance(node, Var):
        out.setdefault(node.name, None)
    elif isinstance(node, Unary):
        _collect_vars(node.arg, out)
    elif isinstance(node, Binary):
        _collect_vars(node.left, out)
        _collect_vars(node.right, out)


@dataclass(frozen=True)
class ExpressionAst:
    """A parsed expression: the root node and its variables in order of first use."""

    root: Node

    @property
    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        _collect_vars(self.root, seen)
        return tuple(seen)

    def __str__(self) -> str:
        return print_expression(self)


# ---------------------------------------------------------------- lexing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-zA-Z_][a-zA-Z0-9_]*)
  | (?P<op>[-+*/^])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", pos, "lexical")
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(source)))
    return tokens


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, kind: str = "syntax") -> ExpressionSyntaxError:
        t = self.tok
        if t.kind == "eof" and self.i > 0:
            # point at the token left dangling, not past the end
            return ExpressionSyntaxError(
                f"unexpected end of input after {self.tokens[self.i - 1].text!r}",
                self.tokens[self.i - 1].pos,
                kind,
            )
        if t.kind == "eof":
            return ExpressionSyntaxError("empty expression", t.pos, kind)
        return ExpressionSyntaxError(f"{message} {t.text!r}", t.pos, kind)

    def expect(self, kind: str) -> _Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {kind}, got")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise self.error("unexpected token")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = _OP_OF[self.advance().text]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = _OP_OF[self.advance().text]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return Binary("pow", base, self.unary())
        return base

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ExpressionSyntaxError(f"number out of range {t.text!r}", t.pos)
            return Const(value)
        if t.kind == "lparen":
            self.advance()
            node = self.expr()
            self.expect("rparen")
            return node
        if t.kind == "ident":
            self.advance()
            if t.text == "pi":
                return Const(math.pi, "pi")
            if t.text in FUNCTIONS:
                return self.call(t)
            if self.tok.kind == "lparen":
                raise ExpressionSyntaxError(f"unknown function {t.text!r}", t.pos)
            return Var(t.text)
        raise self.error("unexpected token")

    def call(self, name: _Token) -> Node:
        if self.tok.kind != "lparen":
            raise ExpressionSyntaxError(
                f"function {name.text!r} requires parentheses", name.pos
            )
        self.advance()
        args = []
        if self.tok.kind != "rparen":
            args.append(self.expr())
            while self.tok.kind == "comma":
                self.advance()
                args.append(self.expr())
        self.expect("rparen")
        if len(args) != 1:
            raise ExpressionSyntaxError(
                f"{name.text} takes exactly 1 argument ({len(args)} given)", name.pos, "arity"
            )
        return Unary(name.text, args[0])


def parse_expression(source: str) -> ExpressionAst:
    """Parse ``source`` into an :class:`ExpressionAst`.

    Raises :class:`ExpressionSyntaxError` carrying the offending offset.
    """
    if not source or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    parser = _Parser(source)
    try:
        return ExpressionAst(parser.parse())
    except RecursionError:
        raise ExpressionSyntaxError("expression nested too deeply", parser.tok.pos) from None


# ---------------------------------------------------------------- printing


def _print(node: Node) -> str:
    if isinstance(node, Const):
        return node.symbol if node.symbol else repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{_print(node.arg)})"
        return f"{node.op}({_print(node.arg)})"
    return f"({_print(node.left)} {_SYMBOL[node.op]} {_print(node.right)})"


def print_expression(ast: ExpressionAst | Node) -> str:
    """Canonical, fully parenthesised text; ``parse_expression`` inverts it."""
    root = ast.root if isinstance(ast, ExpressionAst) else ast
    return _print(root)


# ---------------------------------------------------------------- evaluation

_UNARY_FN = {
    "neg": np.negative,
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}
_BINARY_FN = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}


def _check_finite(value, kind: str):
    if not np.all(np.isfinite(value)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(value)))
        row = int(bad[0]) if np.ndim(value) else None
        raise NonFiniteError(kind, row)
    return value


def _eval(node: Node, bindings: Mapping[str, np.ndarray]):
    if isinstance(node, Const):
        return np.float64(node.value)
    if isinstance(node, Var):
        try:
            value = bindings[node.name]
        except KeyError:
            raise UnboundVariableError(node.name) from None
        return _check_finite(value, "variable")
    if isinstance(node, Unary):
        arg = _eval(node.arg, bindings)
        return _check_finite(_UNARY_FN[node.op](arg), node.op)
    left = _eval(node.left, bindings)
    right = _eval(node.right, bindings)
    return _check_finite(_BINARY_FN[node.op](left, right), node.op)


def evaluate(ast: ExpressionAst | Node, bindings: Mapping[str, object]):
    """Evaluate ``ast`` with variables taken from ``bindings``.

    Values may be floats or equally-shaped arrays. Returns a float for scalar
    input and an array otherwise. Any inf/nan raises :class:`NonFiniteError`
    naming the operation that first produced it (and the row, for arrays).
    """
    root = ast.root if isinstance(ast, ExpressionAst) else ast
    env = {k: np.asarray(v, dtype=np.float64) for k, v in bindings.items()}
    with np.errstate(all="ignore"):
        out = _eval(root, env)
    if np.ndim(out) == 0:
        return float(out)
    # constant expressions still need one value per row
    shape = np.broadcast_shapes(*(v.shape for v in env.values())) if env else ()
    return np.broadcast_to(out, shape).astype(np.float64, copy=True)


# ---------------------------------------------------------------- differentiation

ZERO = Const(0.0)
ONE = Const(1.0)


def _const(v: float) -> Node:
    return Unary("neg", Const(-v)) if v < 0 else Const(float(v))


def _is(node: Node, value: float) -> bool:
    return isinstance(node, Const) and node.symbol is None and node.value == value


def _add(a: Node, b: Node) -> Node:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("add", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return Binary("sub", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Binary("mul", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary("div", a, b)


def _neg(a: Node) -> Node:
    if _is(a, 0.0):
        return ZERO
    return Unary("neg", a)


def _depends_on(node: Node, name: str) -> bool:
    seen: dict[str, None] = {}
    _collect_vars(node, seen)
    return name in seen


def _d(node: Node, x: str) -> Node:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == x else ZERO
    if isinstance(node, Unary):
        u = node.arg
        du = _d(u, x)
        if _is(du, 0.0):
            return ZERO
        if node.op == "neg":
            return _neg(du)
        if node.op == "cos":
            return _mul(_neg(Unary("sin", u)), du)
        if node.op == "sin":
            return _mul(Unary("cos", u), du)
        if node.op == "exp":
            return _mul(node, du)
        if node.op == "log":
            return _div(du, u)
        if node.op == "abs":
            # undefined at u == 0, evaluates to nan there
            return _mul(_div(u, node), du)
        raise DifferentiationError(f"unknown function {node.op!r}")
    u, v = node.left, node.right
    if node.op == "add":
        return _add(_d(u, x), _d(v, x))
    if node.op == "sub":
        return _sub(_d(u, x), _d(v, x))
    if node.op == "mul":
        return _add(_mul(_d(u, x), v), _mul(u, _d(v, x)))
    if node.op == "div":
        num = _sub(_mul(_d(u, x), v), _mul(u, _d(v, x)))
        return _div(num, Binary("mul", v, v))
    if node.op == "pow":
        if _depends_on(v, x):
            raise DifferentiationError(
                f"cannot differentiate a power whose exponent depends on {x!r}: {_print(node)}"
            )
        du = _d(u, x)
        if _is(du, 0.0):
            return ZERO
        if isinstance(v, Const) and v.symbol is None:
            reduced = _const(v.value - 1.0)
        else:
            reduced = Binary("sub", v, ONE)
        if _is(reduced, 1.0):
            power = u
        elif _is(reduced, 0.0):
            power = ONE
        else:
            power = Binary("pow", u, reduced)
        return _mul(_mul(v, power), du)
    raise DifferentiationError(f"unknown operator {node.op!r}")


def differentiate(ast: ExpressionAst, wrt: str) -> ExpressionAst:
    """Symbolic partial derivative of ``ast`` with respect to variable ``wrt``.

    Powers are supported when the exponent does not depend on ``wrt``;
    otherwise :class:`DifferentiationError` is raised.
    """
    return ExpressionAst(_d(ast.root, wrt))
