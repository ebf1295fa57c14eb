"""Scalar-field expressions over the coordinates ``x1, ..., xd``.

The grammar (see ``docs/GRAMMAR.md``) covers numeric literals, coordinates,
named constants, ``+ - * / ^``, unary minus and a small function library::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

``^`` binds tighter than unary minus and is right-associative, so ``-2^2``
is ``-4`` and ``2^3^2`` is ``2^9``.

Expressions are immutable trees. Evaluation is vectorised over numpy arrays
and raises :class:`ExprDomainError` instead of returning NaN or inf.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ExpressionError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "ExprDomainError",
    "DimensionError",
    "Expression",
    "parse",
    "evaluate",
    "evaluate_batch",
    "to_source",
]


class ExpressionError(Exception):
    """Base class for all expression errors."""


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class ExprDomainError(ExpressionError, ArithmeticError):
    pass


class DimensionError(ExpressionError, ValueError):
    pass


# -- tree -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based


@dataclass(frozen=True)
class Const:
    name: str
    value: float


@dataclass(frozen=True)
class VecConst:
    name: str
    value: tuple


@dataclass(frozen=True)
class VecX:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Const, VecConst, VecX, Neg, BinOp, Call]

_SCALAR_FUNCS = {"exp", "ln", "sqrt", "sin", "cos", "tanh", "abs"}
_VARIADIC_FUNCS = {"min", "max"}
_VECTOR_FUNCS = {"norm": 1, "norm2": 1, "dot": 2}
_BUILTIN_CONSTANTS = {"pi": math.pi, "e": math.e}


# -- tokenizer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)"
    r"|(?P<nl>\n)"
    r"|(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - line_start + 1))
    return toks


# -- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, source: str, constants: Mapping[str, object]):
        self.toks = _tokenize(source)
        self.i = 0
        self.scalars: dict[str, float] = dict(_BUILTIN_CONSTANTS)
        self.vectors: dict[str, tuple] = {}
        for name, value in constants.items():
            if np.ndim(value) == 0:
                self.scalars[name] = float(value)
            else:
                self.vectors[name] = tuple(float(v) for v in np.ravel(value))

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.tok
        if t.text != text:
            found = "end of input" if t.kind == "end" else repr(t.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", t.line, t.col)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            t = self.tok
            raise ExprSyntaxError(f"unexpected token {t.text!r}", t.line, t.col)
        self.check_scalar(node, self.toks[0])
        return node

    def check_scalar(self, node: Node, tok: _Tok) -> None:
        if isinstance(node, (VecX, VecConst)):
            raise ExprSyntaxError("vector used where a scalar is required", tok.line, tok.col)

    def expr(self) -> Node:
        start = self.tok
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            right_tok = self.tok
            right = self.term()
            self.check_scalar(node, start)
            self.check_scalar(right, right_tok)
            node = BinOp(op, node, right)
        return node

    def term(self) -> Node:
        start = self.tok
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            right_tok = self.tok
            right = self.unary()
            self.check_scalar(node, start)
            self.check_scalar(right, right_tok)
            node = BinOp(op, node, right)
        return node

    def unary(self) -> Node:
        if self.tok.text in ("-", "+"):
            op = self.advance()
            operand_tok = self.tok
            operand = self.unary()
            self.check_scalar(operand, operand_tok)
            return Neg(operand) if op.text == "-" else operand
        return self.power()

    def power(self) -> Node:
        base_tok = self.tok
        base = self.atom()
        if self.tok.text == "^":
            self.advance()
            exp_tok = self.tok
            exponent = self.unary()
            self.check_scalar(base, base_tok)
            self.check_scalar(exponent, exp_tok)
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "name":
            self.advance()
            if self.tok.text == "(":
                return self.call(t)
            return self.identifier(t)
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"unexpected {found}", t.line, t.col)

    def identifier(self, t: _Tok) -> Node:
        name = t.text
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if m:
            return Var(int(m.group(1)) - 1)
        if name == "x":
            return VecX()
        if name in self.scalars:
            return Const(name, self.scalars[name])
        if name in self.vectors:
            return VecConst(name, self.vectors[name])
        raise UnknownIdentifierError(f"unknown identifier {name!r}", t.line, t.col)

    def call(self, t: _Tok) -> Node:
        name = t.text
        known = name in _SCALAR_FUNCS or name in _VARIADIC_FUNCS or name in _VECTOR_FUNCS
        if not known:
            raise UnknownIdentifierError(f"unknown function {name!r}", t.line, t.col)
        self.expect("(")
        args, arg_toks = [], []
        if self.tok.text != ")":
            while True:
                arg_toks.append(self.tok)
                args.append(self.expr())
                if self.tok.text != ",":
                    break
                self.advance()
        self.expect(")")
        n = len(args)
        if name in _SCALAR_FUNCS and n != 1:
            raise ArityError(f"{name} takes 1 argument, got {n}", t.line, t.col)
        if name in _VARIADIC_FUNCS and n < 2:
            raise ArityError(f"{name} takes at least 2 arguments, got {n}", t.line, t.col)
        if name in _VECTOR_FUNCS:
            if n != _VECTOR_FUNCS[name]:
                raise ArityError(
                    f"{name} takes {_VECTOR_FUNCS[name]} argument(s), got {n}", t.line, t.col)
            for a, at in zip(args, arg_toks):
                if not isinstance(a, (VecX, VecConst)):
                    raise ExprSyntaxError(f"{name} expects vector arguments", at.line, at.col)
        else:
            for a, at in zip(args, arg_toks):
                self.check_scalar(a, at)
        return Call(name, tuple(args))


# -- evaluation -------------------------------------------------------------

def _max_var(node: Node) -> int:
    """Number of coordinates the tree needs (``0`` if none)."""
    if isinstance(node, Var):
        return node.index + 1
    if isinstance(node, Neg):
        return _max_var(node.operand)
    if isinstance(node, BinOp):
        return max(_max_var(node.left), _max_var(node.right))
    if isinstance(node, Call):
        return max((_max_var(a) for a in node.args), default=0)
    return 0


def _uses_vector_x(node: Node) -> bool:
    if isinstance(node, VecX):
        return True
    if isinstance(node, Neg):
        return _uses_vector_x(node.operand)
    if isinstance(node, BinOp):
        return _uses_vector_x(node.left) or _uses_vector_x(node.right)
    if isinstance(node, Call):
        return any(_uses_vector_x(a) for a in node.args)
    return False


def _domain(mask, message: str):
    if np.any(mask):
        raise ExprDomainError(message)


def _vec(node: Node, X: np.ndarray) -> np.ndarray:
    if isinstance(node, VecX):
        return X
    vec = np.asarray(node.value, dtype=float)
    if vec.shape[0] != X.shape[1]:
        raise DimensionError(
            f"constant vector {node.name!r} has length {vec.shape[0]}, point has {X.shape[1]}")
    return np.broadcast_to(vec, X.shape)


def _eval(node: Node, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if isinstance(node, Num):
        return np.full(n, node.value)
    if isinstance(node, Const):
        return np.full(n, node.value)
    if isinstance(node, Var):
        return X[:, node.index]
    if isinstance(node, Neg):
        return -_eval(node.operand, X)
    if isinstance(node, BinOp):
        a = _eval(node.left, X)
        b = _eval(node.right, X)
        with np.errstate(all="ignore"):
            if node.op == "+":
                out = a + b
            elif node.op == "-":
                out = a - b
            elif node.op == "*":
                out = a * b
            elif node.op == "/":
                _domain(b == 0, "division by zero")
                out = a / b
            else:
                _domain((a == 0) & (b < 0), "zero raised to a negative power")
                _domain((a < 0) & (b != np.round(b)), "negative base with non-integer exponent")
                out = np.power(a, b)
        _domain(~np.isfinite(out) & np.isfinite(a) & np.isfinite(b),
                f"overflow in {node.op!r}")
        return out
    if isinstance(node, Call):
        name = node.name
        if name in _VECTOR_FUNCS:
            vs = [_vec(a, X) for a in node.args]
            if name == "norm2":
                return np.sum(vs[0] * vs[0], axis=1)
            if name == "norm":
                return np.sqrt(np.sum(vs[0] * vs[0], axis=1))
            return np.sum(vs[0] * vs[1], axis=1)
        args = [_eval(a, X) for a in node.args]
        if name == "min":
            return np.minimum.reduce(args)
        if name == "max":
            return np.maximum.reduce(args)
        a = args[0]
        with np.errstate(all="ignore"):
            if name == "exp":
                out = np.exp(a)
                _domain(np.isinf(out) & np.isfinite(a), "overflow in exp")
                return out
            if name == "ln":
                _domain(a <= 0, "ln of a non-positive number")
                return np.log(a)
            if name == "sqrt":
                _domain(a < 0, "sqrt of a negative number")
                return np.sqrt(a)
            if name == "sin":
                return np.sin(a)
            if name == "cos":
                return np.cos(a)
            if name == "tanh":
                return np.tanh(a)
            return np.abs(a)
    raise ExpressionError(f"cannot evaluate node {node!r}")  # pragma: no cover


class Expression:
    """A parsed expression. Call it on a point or on an ``(n, d)`` array."""

    __slots__ = ("tree", "source", "n_vars", "uses_x")

    def __init__(self, tree: Node, source: str | None = None):
        self.tree = tree
        self.source = source if source is not None else to_source(tree)
        self.n_vars = _max_var(tree)
        self.uses_x = _uses_vector_x(tree)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            return evaluate(self, x)
        return evaluate_batch(self, x)


def parse(source: str, constants: Mapping[str, object] | None = None) -> Expression:
    """Parse ``source`` into an :class:`Expression`.

    ``constants`` maps names to scalars or vectors; vectors may only appear as
    arguments of ``norm``, ``norm2`` and ``dot``. ``pi`` and ``e`` are
    predefined.
    """
    tree = _Parser(source, constants or {}).parse()
    return Expression(tree, source)


def evaluate_batch(e: Expression, X) -> np.ndarray:
    """Evaluate at each row of an ``(n, d)`` array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected an (n, d) array, got shape {X.shape}")
    if X.shape[1] < e.n_vars:
        raise DimensionError(
            f"expression uses x{e.n_vars} but points have dimension {X.shape[1]}")
    return _eval(e.tree, X)


def evaluate(e: Expression, x: Sequence[float] | float) -> float:
    """Evaluate at a single point and return a Python float."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(evaluate_batch(e, x[None, :])[0])


# -- printing ---------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _PREC["neg"]
    return _PREC["atom"]


def _wrap(node: Node, parens: bool) -> str:
    s = _print(node)
    return f"({s})" if parens else s


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, (Const, VecConst)):
        return node.name
    if isinstance(node, VecX):
        return "x"
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _prec(node.operand) < _PREC["neg"])
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        if node.op == "^":
            left = _wrap(node.left, _prec(node.left) <= p)
            right = _wrap(node.right, _prec(node.right) < _PREC["neg"])
            return f"{left}^{right}"
        left = _wrap(node.left, _prec(node.left) < p)
        right = _wrap(node.right, _prec(node.right) <= p)
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_print(a) for a in node.args)})"
    raise ExpressionError(f"cannot print node {node!r}")  # pragma: no cover


def to_source(e: Expression | Node) -> str:
    """Pretty-print with the minimal parentheses that re-parse to the same tree."""
    tree = e.tree if isinstance(e, Expression) else e
    return _print(tree)
