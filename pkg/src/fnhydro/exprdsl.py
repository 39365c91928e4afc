"""A small expression language for smooth coordinate functions.

Expressions are parsed into an immutable tree and evaluated over batches of
points as second-order jets (value, gradient, Hessian) by forward-mode
propagation.  The grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom (("^" | "**") unary)?        # right-associative
    atom    := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := sin | cos | tan | exp | log | sqrt
    NUMBER  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]

``NAME`` is a coordinate name or the constant ``pi``.  Since ``^`` binds
tighter than unary minus, ``-x^2`` is ``-(x^2)``; the exponent itself may be
signed, so ``x^-1`` parses.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    EvaluationError,
    ExprSyntaxError,
    UnknownIdentifierError,
)
from .jet import Jet2

__all__ = [
    "Expr",
    "parse",
    "eval_jet2",
    "default_names",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")
CONSTANTS = {"pi": math.pi}


# -- tree -------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Coord:
    index: int


@dataclass(frozen=True)
class Neg:
    child: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


Node = Union[Const, Coord, Neg, BinOp, Call]


def _is_constant(node: Node) -> bool:
    if isinstance(node, Const):
        return True
    if isinstance(node, Coord):
        return False
    if isinstance(node, Neg):
        return _is_constant(node.child)
    if isinstance(node, Call):
        return _is_constant(node.arg)
    return _is_constant(node.left) and _is_constant(node.right)


def _max_index(node: Node) -> int:
    if isinstance(node, Coord):
        return node.index
    if isinstance(node, Const):
        return -1
    if isinstance(node, (Neg, Call)):
        return _max_index(node.child if isinstance(node, Neg) else node.arg)
    return max(_max_index(node.left), _max_index(node.right))


# -- tokenizer and parser ---------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


def _tokenize(source: str):
    pos = 0
    tokens = []
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos, source)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "op" and text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, names: Sequence[str]):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.index = {name: k for k, name in enumerate(names)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, got, pos = self.take()
        if got != text or kind != "op":
            what = "end of input" if kind == "end" else repr(got)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", pos, self.source)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos, self.source)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in self.index:
                if self.peek()[1] == "(":
                    raise ExprSyntaxError(
                        f"coordinate {text!r} is not a function", self.peek()[2], self.source
                    )
                return Coord(self.index[text])
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ArityError(
                        f"function {text!r} needs one argument", self.peek()[2], self.source
                    )
                self.take()
                if self.peek()[1] == ")":
                    raise ArityError(f"function {text!r} takes 1 argument, got 0", pos, self.source)
                arg = self.expr()
                nargs = 1
                while self.peek()[1] == ",":
                    self.take()
                    self.expr()
                    nargs += 1
                if nargs != 1:
                    raise ArityError(
                        f"function {text!r} takes 1 argument, got {nargs}", pos, self.source
                    )
                self.expect(")")
                return Call(text, arg)
            if text in CONSTANTS:
                return Const(CONSTANTS[text])
            raise UnknownIdentifierError(f"unknown identifier {text!r}", pos, self.source)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos, self.source)


def default_names(n: int) -> list:
    return [f"x{i + 1}" for i in range(n)]


class Expr:
    """Parsed expression in ``dim`` coordinates.  Immutable."""

    __slots__ = ("ast", "dim", "names")

    def __init__(self, ast: Node, dim: int, names: Sequence[str] | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        if _max_index(ast) >= dim:
            raise ValueError("expression references a coordinate beyond dim")
        object.__setattr__(self, "ast", ast)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "names", tuple(names or default_names(dim)))

    def __setattr__(self, key, value):
        raise AttributeError("Expr is immutable")

    def __repr__(self) -> str:
        return f"Expr({self.to_source()!r}, dim={self.dim})"

    @property
    def is_constant(self) -> bool:
        return _is_constant(self.ast)

    def to_source(self) -> str:
        return _format(self.ast, self.names)

    def derivative(self, index: int) -> "Expr":
        """Exact symbolic partial derivative with respect to coordinate ``index``."""
        return Expr(_diff(self.ast, index), self.dim, self.names)

    def jet(self, points: np.ndarray, order: int = 2) -> Jet2:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"points have {points.shape[1]} coordinates, expected {self.dim}")
        with np.errstate(all="ignore"):
            out = _Evaluator(points, order, self.names).eval(self.ast)
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.jet(points, order=0).value


def parse(source: str, dim: int | None = None, names: Sequence[str] | None = None) -> Expr:
    """Parse ``source`` into an :class:`Expr` over ``dim`` coordinates.

    >>> parse("x1*x2^2", 2)([2.0, 3.0])
    array([18.])
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source or "")
    if names is None:
        if dim is None:
            raise ValueError("either dim or names is required")
        names = default_names(dim)
    names = list(names)
    if dim is None:
        dim = len(names)
    if len(names) != dim:
        raise ValueError(f"{len(names)} coordinate names for dim {dim}")
    if len(set(names)) != len(names):
        raise ValueError("coordinate names must be distinct")
    for name in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
            raise ValueError(f"invalid coordinate name {name!r}")
        if name in FUNCTIONS:
            raise ValueError(f"coordinate name {name!r} shadows a function")
    return Expr(_Parser(source, names).parse(), dim, names)


def eval_jet2(e: Expr, p) -> Jet2:
    """Value, gradient and Hessian of ``e`` at the single point ``p``."""
    p = np.asarray(p, dtype=float)
    if p.shape != (e.dim,):
        raise ValueError(f"point must have {e.dim} components")
    j = e.jet(p[None, :], order=2).at(0)
    return Jet2(float(j.value), j.grad, j.hess)


# -- evaluation -------------------------------------------------------------


def _unary_parts(name: str, u: np.ndarray):
    if name == "sin":
        s, c = np.sin(u), np.cos(u)
        return s, c, -s
    if name == "cos":
        s, c = np.sin(u), np.cos(u)
        return c, -s, -c
    if name == "tan":
        t = np.tan(u)
        sec2 = 1.0 + t * t
        return t, sec2, 2.0 * t * sec2
    if name == "exp":
        e = np.exp(u)
        return e, e, e
    if name == "log":
        return np.log(u), 1.0 / u, -1.0 / (u * u)
    if name == "sqrt":
        r = np.sqrt(u)
        return r, 0.5 / r, -0.25 / (r * u)
    raise KeyError(name)


class _Evaluator:
    def __init__(self, points: np.ndarray, order: int, names):
        self.points = points
        self.P, self.n = points.shape
        self.order = order
        self.names = names

    def _const(self, c: float) -> Jet2:
        P, n = self.P, self.n
        return Jet2(
            np.full(P, c),
            np.zeros((P, n)) if self.order >= 1 else None,
            np.zeros((P, n, n)) if self.order >= 2 else None,
        )

    def _fail(self, node: Node, message: str, cls=DomainError):
        raise cls(f"{message} in '{_format(node, self.names)}'", _format(node, self.names))

    def _check(self, node: Node, jet: Jet2) -> Jet2:
        for part in (jet.value, jet.grad, jet.hess):
            if part is not None and not np.all(np.isfinite(part)):
                self._fail(node, "non-finite result", EvaluationError)
        return jet

    def eval(self, node: Node) -> Jet2:
        if isinstance(node, Const):
            return self._const(node.value)
        if isinstance(node, Coord):
            P, n = self.P, self.n
            grad = hess = None
            if self.order >= 1:
                grad = np.zeros((P, n))
                grad[:, node.index] = 1.0
            if self.order >= 2:
                hess = np.zeros((P, n, n))
            return Jet2(self.points[:, node.index].copy(), grad, hess)
        if isinstance(node, Neg):
            return -self.eval(node.child)
        if isinstance(node, Call):
            u = self.eval(node.arg)
            if node.name == "log" and np.any(u.value <= 0):
                self._fail(node, "log of non-positive argument")
            if node.name == "sqrt":
                if np.any(u.value < 0):
                    self._fail(node, "sqrt of negative argument")
                if self.order >= 1 and np.any(u.value == 0):
                    self._fail(node, "sqrt not differentiable at 0")
            f0, f1, f2 = _unary_parts(node.name, u.value)
            return self._check(node, self._chain(u, f0, f1, f2))
        if node.op == "+":
            return self.eval(node.left) + self.eval(node.right)
        if node.op == "-":
            return self.eval(node.left) - self.eval(node.right)
        if node.op == "*":
            return self._check(node, self._mul(self.eval(node.left), self.eval(node.right)))
        if node.op == "/":
            b = self.eval(node.right)
            if np.any(b.value == 0):
                self._fail(node, "division by zero")
            v = b.value
            recip = self._chain(b, 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
            return self._check(node, self._mul(self.eval(node.left), recip))
        if node.op == "^":
            return self._check(node, self._pow(node))
        raise TypeError(node)

    def _mul(self, a: Jet2, b: Jet2) -> Jet2:
        value = a.value * b.value
        grad = hess = None
        if self.order >= 1:
            grad = a.value[:, None] * b.grad + b.value[:, None] * a.grad
        if self.order >= 2:
            # o + o^T is bitwise symmetric: a_i b_j + a_j b_i in either slot
            o = a.grad[:, :, None] * b.grad[:, None, :]
            hess = (
                a.value[:, None, None] * b.hess
                + b.value[:, None, None] * a.hess
                + (o + np.swapaxes(o, 1, 2))
            )
        return Jet2(value, grad, hess)

    def _chain(self, u: Jet2, f0, f1, f2) -> Jet2:
        grad = hess = None
        if self.order >= 1:
            grad = f1[:, None] * u.grad
        if self.order >= 2:
            g = u.grad
            hess = f1[:, None, None] * u.hess + f2[:, None, None] * (g[:, :, None] * g[:, None, :])
        return Jet2(np.asarray(f0, dtype=float), grad, hess)

    def _pow(self, node: BinOp) -> Jet2:
        base = self.eval(node.left)
        if _is_constant(node.right):
            c = float(self.eval(node.right).value[0])
            u = base.value
            if c == 0.0:
                return self._const(1.0)
            if float(c).is_integer():
                k = int(c)
                if k < 0 and np.any(u == 0):
                    self._fail(node, "division by zero")
                f0 = u**k
                f1 = k * u ** (k - 1) if k != 1 else np.ones_like(u)
                f2 = k * (k - 1) * u ** (k - 2) if k not in (0, 1) else np.zeros_like(u)
                return self._chain(base, f0, f1, f2)
            if np.any(u < 0):
                self._fail(node, "fractional power of negative base")
            if np.any(u == 0) and (
                (self.order >= 1 and c < 1.0) or (self.order >= 2 and c < 2.0)
            ):
                self._fail(node, "fractional power not differentiable at 0")
            return self._chain(base, u**c, c * u ** (c - 1), c * (c - 1) * u ** (c - 2))
        if np.any(base.value <= 0):
            self._fail(node, "variable exponent needs a positive base")
        lg = self._chain(
            base, np.log(base.value), 1.0 / base.value, -1.0 / base.value**2
        )
        prod = self._mul(self.eval(node.right), lg)
        e = np.exp(prod.value)
        return self._chain(prod, e, e, e)


# -- printing ---------------------------------------------------------------


def _format(node: Node, names) -> str:
    if isinstance(node, Const):
        if node.value == math.pi:
            return "pi"
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Coord):
        return names[node.index]
    if isinstance(node, Neg):
        return f"(-{_format(node.child, names)})"
    if isinstance(node, Call):
        return f"{node.name}({_format(node.arg, names)})"
    return f"({_format(node.left, names)} {node.op} {_format(node.right, names)})"


# -- symbolic differentiation ----------------------------------------------

ZERO = Const(0.0)
ONE = Const(1.0)


def _is(node: Node, c: float) -> bool:
    return isinstance(node, Const) and node.value == c


def _add(a: Node, b: Node) -> Node:
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    return BinOp("-", a, b)


def _neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.child
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def _diff(node: Node, i: int) -> Node:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Coord):
        return ONE if node.index == i else ZERO
    if isinstance(node, Neg):
        return _neg(_diff(node.child, i))
    if isinstance(node, Call):
        u = node.arg
        du = _diff(u, i)
        if _is(du, 0):
            return ZERO
        name = node.name
        if name == "sin":
            outer = Call("cos", u)
        elif name == "cos":
            outer = _neg(Call("sin", u))
        elif name == "tan":
            outer = _add(ONE, BinOp("^", node, Const(2.0)))
        elif name == "exp":
            outer = node
        elif name == "log":
            return _div(du, u)
        elif name == "sqrt":
            return _div(du, _mul(Const(2.0), node))
        else:
            raise KeyError(name)
        return _mul(outer, du)
    a, b = node.left, node.right
    if node.op == "+":
        return _add(_diff(a, i), _diff(b, i))
    if node.op == "-":
        return _sub(_diff(a, i), _diff(b, i))
    if node.op == "*":
        return _add(_mul(_diff(a, i), b), _mul(a, _diff(b, i)))
    if node.op == "/":
        da, db = _diff(a, i), _diff(b, i)
        if _is(db, 0):
            return _div(da, b)
        return _div(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Const(2.0)))
    if node.op == "^":
        da = _diff(a, i)
        if _is_constant(b):
            if _is(da, 0):
                return ZERO
            reduced = BinOp("-", b, ONE) if not isinstance(b, Const) else Const(b.value - 1.0)
            return _mul(_mul(b, BinOp("^", a, reduced)), da)
        # d(a^b) = a^b (b' log a + b a'/a)
        db = _diff(b, i)
        inner = _add(_mul(db, Call("log", a)), _div(_mul(b, da), a))
        return _mul(node, inner)
    raise TypeError(node)
