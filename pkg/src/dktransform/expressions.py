"""Expression trees for scalar fields and the parser that builds them.

Trees are built either from strings::

    >>> e = parse("4*Q1^2", variables=["Q1"])
    >>> float(e.evaluate({"Q1": 0.5}))
    1.0

or directly in Python through operator overloading on :func:`var` nodes.
Evaluation is polymorphic: the same tree evaluates on floats, numpy arrays
or :class:`~dktransform.jets.Jet` objects, which is how exact derivatives
are obtained.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import jets
from .errors import ParseError

FUNCTIONS = {
    "exp": jets.exp,
    "log": jets.log,
    "sin": jets.sin,
    "cos": jets.cos,
    "sqrt": jets.sqrt,
}

CONSTANTS = {"pi": math.pi, "e": math.e}


class Expr:
    """Base node.  Subclasses implement ``evaluate`` and ``to_string``."""

    precedence = 100

    def evaluate(self, env: Mapping[str, object]):
        raise NotImplementedError

    def to_string(self) -> str:
        raise NotImplementedError

    def variables(self) -> set[str]:
        return set()

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"Expr({self.to_string()!r})"

    def __add__(self, other):
        return BinOp("+", self, wrap(other))

    def __radd__(self, other):
        return BinOp("+", wrap(other), self)

    def __sub__(self, other):
        return BinOp("-", self, wrap(other))

    def __rsub__(self, other):
        return BinOp("-", wrap(other), self)

    def __mul__(self, other):
        return BinOp("*", self, wrap(other))

    def __rmul__(self, other):
        return BinOp("*", wrap(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, wrap(other))

    def __rtruediv__(self, other):
        return BinOp("/", wrap(other), self)

    def __pow__(self, other):
        return BinOp("^", self, wrap(other))

    def __neg__(self):
        return Neg(self)


def wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(float(x))


@dataclass(frozen=True, eq=False)
class Const(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def to_string(self) -> str:
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            s = str(int(v))
        else:
            s = repr(v)
        return f"({s})" if v < 0 else s


@dataclass(frozen=True, eq=False)
class Var(Expr):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise KeyError(f"unbound variable {self.name!r}") from None

    def to_string(self) -> str:
        return self.name

    def variables(self):
        return {self.name}


@dataclass(frozen=True, eq=False)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def to_string(self) -> str:
        inner = self.arg.to_string()
        if self.arg.precedence <= self.precedence:
            inner = f"({inner})"
        return f"-{inner}"

    def variables(self):
        return self.arg.variables()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


@dataclass(frozen=True, eq=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return _PREC[self.op]

    def evaluate(self, env):
        a = self.left.evaluate(env)
        if self.op == "^" and isinstance(self.right, Const):
            return _power(a, self.right.value)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        if isinstance(b, jets.Jet) or isinstance(a, jets.Jet):
            if not isinstance(a, jets.Jet):
                return jets.exp(b * math.log(a))
            return a**b
        return np.power(a, b)

    def to_string(self) -> str:
        p = self.precedence
        left = self.left.to_string()
        right = self.right.to_string()
        if self.left.precedence < p or (self.op == "^" and self.left.precedence <= p):
            left = f"({left})"
        if self.right.precedence < p or (self.op in "-/" and self.right.precedence <= p):
            right = f"({right})"
        return f"{left} {self.op} {right}" if p == 1 else f"{left}{self.op}{right}"

    def variables(self):
        return self.left.variables() | self.right.variables()


def _power(a, p: float):
    if isinstance(a, jets.Jet):
        return a**p
    if float(p).is_integer():
        return np.power(a, int(p)) if p >= 0 else 1.0 / np.power(a, int(-p))
    return np.power(a, p)


@dataclass(frozen=True, eq=False)
class Func(Expr):
    name: str
    arg: Expr

    def evaluate(self, env):
        return FUNCTIONS[self.name](self.arg.evaluate(env))

    def to_string(self) -> str:
        return f"{self.name}({self.arg.to_string()})"

    def variables(self):
        return self.arg.variables()


def var(name: str) -> Var:
    return Var(name)


def coords(prefix: str, dim: int) -> list[Var]:
    """Coordinate variables ``prefix1 .. prefix<dim>``."""
    return [Var(f"{prefix}{i + 1}") for i in range(dim)]


def exp(x):
    return Func("exp", wrap(x))


def log(x):
    return Func("log", wrap(x))


def sin(x):
    return Func("sin", wrap(x))


def cos(x):
    return Func("cos", wrap(x))


def sqrt(x):
    return Func("sqrt", wrap(x))


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)

_UNICODE_OPS = {"−": "-", "×": "*", "·": "*", "÷": "/"}


def _tokenize(text: str, field):
    for k, v in _UNICODE_OPS.items():
        text = text.replace(k, v)
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r} in {text!r}", field=field, column=pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group(kind)
            if value == "**":
                value = "^"
            tokens.append((kind, value, pos + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text, variables, parameters, field):
        self.text = text
        self.tokens = _tokenize(text, field)
        self.i = 0
        self.variables = set(variables)
        self.parameters = dict(parameters or {})
        self.field = field

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok):
        return ParseError(f"{msg} in {self.text!r}", field=self.field, column=tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)

    def parse(self) -> Expr:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise self.error(f"unexpected {tok[1]!r}", tok)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Neg(arg)
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, value = tok[0], tok[1]
        if kind == "num":
            return Const(float(value))
        if kind == "ident":
            if self.peek()[1] == "(":
                if value not in FUNCTIONS:
                    raise self.error(f"unknown function {value!r}", tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(value, arg)
            if value in self.variables:
                return Var(value)
            if value in self.parameters:
                return Const(float(self.parameters[value]))
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            raise self.error(f"unknown identifier {value!r}", tok)
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected {value or 'end of input'!r}", tok)


def parse(text: str, variables, parameters: Mapping[str, float] | None = None, field=None) -> Expr:
    """Parse an arithmetic expression over the named ``variables``.

    Grammar: literals, identifiers, ``+ - * / ^`` (``**`` accepted), unary
    minus, parentheses and the functions exp, log, sin, cos, sqrt.  Named
    ``parameters`` are substituted as constants.
    """
    if isinstance(text, (int, float)):
        return Const(float(text))
    if not isinstance(text, str):
        raise ParseError(f"expected an expression string, got {type(text).__name__}", field=field)
    return _Parser(text, variables, parameters, field).parse()
