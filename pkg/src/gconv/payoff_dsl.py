"""Payoff expressions over increments x1, x2, x3.

Grammar (tightest binding first: unary, ^, *, then + and -)::

    expr    := term (('+' | '-') term)*
    term    := power ('*' power)*
    power   := unary ('^' INT)*
    unary   := ('-' | '+') unary | primary
    primary := NUMBER | VAR | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Functions: abs, sin, cos, exp (argument clamped at 40), min, max, pow(e, k),
call(e, K) = max(e - K, 0), put(e, K) = max(K - e, 0).  There is no division
and no unclamped exp, so every expression is locally Lipschitz with
polynomial growth; the growth envelope is derived bottom-up.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .expectation import CylinderPayoff
from .pde import Envelope

EXP_CLAMP = 40.0
MAX_GROWTH = 6
N_VARS = 3


class PayoffSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at offset {pos}")
        self.pos = pos


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    arg: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]

FUNCTIONS = {"abs": 1, "sin": 1, "cos": 1, "exp": 1, "min": 2, "max": 2, "pow": 2, "call": 2, "put": 2}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[-+*^(),]))"
)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise PayoffSyntaxError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        text = m.group(kind)
        if text == "**":
            text = "^"
        out.append((kind, text, start))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def take(self, text=None):
        kind, val, pos = self.tok
        if text is not None and val != text:
            raise PayoffSyntaxError(f"expected {text!r}, got {val or 'end of input'!r}", pos)
        self.i += 1
        return kind, val, pos

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.tok
        if kind != "end":
            raise PayoffSyntaxError(f"unexpected {val!r}", pos)
        return e

    def expr(self):
        left = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            _, op, pos = self.take()
            left = BinOp(op, left, self.term(), pos)
        return left

    def term(self):
        left = self.power()
        while self.tok[1] == "*" and self.tok[0] == "op":
            _, op, pos = self.take()
            left = BinOp(op, left, self.power(), pos)
        return left

    def power(self):
        base = self.unary()
        while self.tok[1] == "^" and self.tok[0] == "op":
            _, _, pos = self.take()
            kind, val, epos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise PayoffSyntaxError("exponent must be a non-negative integer literal", epos)
            base = Pow(base, int(val), pos)
        return base

    def unary(self):
        kind, val, pos = self.tok
        if kind == "op" and val in ("-", "+"):
            self.take()
            arg = self.unary()
            return Neg(arg, pos) if val == "-" else arg
        return self.primary()

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val), pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.take(")")
            return e
        if kind == "name":
            if self.tok[1] == "(":
                return self.call(val, pos)
            m = re.fullmatch(r"x([1-9]\d*)", val)
            if m and int(m.group(1)) <= N_VARS:
                return Var(int(m.group(1)), pos)
            raise PayoffSyntaxError(f"unknown identifier {val!r}", pos)
        raise PayoffSyntaxError(f"unexpected {val or 'end of input'!r}", pos)

    def call(self, name, pos):
        if name not in FUNCTIONS:
            raise PayoffSyntaxError(f"unknown function {name!r}", pos)
        self.take("(")
        args = [self.expr()]
        while self.tok[1] == ",":
            self.take()
            args.append(self.expr())
        self.take(")")
        if len(args) != FUNCTIONS[name]:
            raise PayoffSyntaxError(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", pos)
        if name == "pow":
            k = args[1]
            if not (isinstance(k, Num) and k.value >= 0 and float(k.value).is_integer()):
                raise PayoffSyntaxError("pow exponent must be a non-negative integer literal", pos)
            return Pow(args[0], int(k.value), pos)
        return Call(name, tuple(args), pos)


def parse(src: str) -> Expr:
    """Parse and check the growth envelope; errors carry the byte offset."""
    e = _Parser(src).parse()
    envelope(e)
    return e


def to_text(e: Expr) -> str:
    """Fully parenthesized form; parse(to_text(e)) == e."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)}^{e.exponent})"
    return f"{e.name}({', '.join(to_text(a) for a in e.args)})"


def arity(e: Expr) -> int:
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Num):
        return 0
    if isinstance(e, Neg):
        return arity(e.arg)
    if isinstance(e, BinOp):
        return max(arity(e.left), arity(e.right))
    if isinstance(e, Pow):
        return arity(e.base)
    return max(arity(a) for a in e.args)


def evaluate(e: Expr, *args):
    """Evaluate at up to three reals (or broadcastable arrays)."""
    if arity(e) > len(args):
        raise ValueError(f"expression uses x{arity(e)} but only {len(args)} argument(s) given")
    out = _eval(e, [np.asarray(a, dtype=float) for a in args])
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _eval(e, xs):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return xs[e.index - 1]
    if isinstance(e, Neg):
        return -_eval(e.arg, xs)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, xs), _eval(e.right, xs)
        return a + b if e.op == "+" else a - b if e.op == "-" else a * b
    if isinstance(e, Pow):
        b = _eval(e.base, xs)
        return np.power(b, e.exponent) if e.exponent else np.ones_like(b, dtype=float)
    a = [_eval(arg, xs) for arg in e.args]
    name = e.name
    if name == "abs":
        return np.abs(a[0])
    if name == "sin":
        return np.sin(a[0])
    if name == "cos":
        return np.cos(a[0])
    if name == "exp":
        return np.exp(np.minimum(a[0], EXP_CLAMP))
    if name == "min":
        return np.minimum(a[0], a[1])
    if name == "max":
        return np.maximum(a[0], a[1])
    if name == "call":
        return np.maximum(a[0] - a[1], 0.0)
    if name == "put":
        return np.maximum(a[1] - a[0], 0.0)
    raise AssertionError(name)


# -- growth envelope -------------------------------------------------------------
#
# Each node carries a Lipschitz bound (C, d): |f(x) - f(y)| <= C (1 + |x|^d + |y|^d) |x - y|
# and an amplitude bound (A, p): |f(x)| <= A (1 + |x|^p), |.| the Euclidean norm.
# Raising d from a to b costs a factor 3; raising p costs a factor 2.


@dataclass(frozen=True)
class _Bound:
    C: float
    d: int
    A: float
    p: int


def _lip_lift(C, a, b):
    return C if a == b or C == 0 else 3.0 * C


def _amp_lift(A, a, b):
    return A if a == b or A == 0 else 2.0 * A


def _combine_lip(pairs):
    d = max(deg for _, deg in pairs)
    return [_lip_lift(C, deg, d) for C, deg in pairs], d


def _mul(f: _Bound, g: _Bound) -> _Bound:
    terms = [(4.0 * f.A * g.C, f.p + g.d), (4.0 * g.A * f.C, g.p + f.d)]
    Cs, d = _combine_lip(terms)
    return _Bound(sum(Cs), d, 4.0 * f.A * g.A, f.p + g.p)


def _add(f: _Bound, g: _Bound) -> _Bound:
    Cs, d = _combine_lip([(f.C, f.d), (g.C, g.d)])
    p = max(f.p, g.p)
    return _Bound(sum(Cs), d, _amp_lift(f.A, f.p, p) + _amp_lift(g.A, g.p, p), p)


def _maxlike(f: _Bound, g: _Bound) -> _Bound:
    Cs, d = _combine_lip([(f.C, f.d), (g.C, g.d)])
    p = max(f.p, g.p)
    return _Bound(max(Cs), d, max(_amp_lift(f.A, f.p, p), _amp_lift(g.A, g.p, p)), p)


def _bound(e) -> _Bound:
    if isinstance(e, Num):
        b = _Bound(0.0, 0, abs(e.value), 0)
    elif isinstance(e, Var):
        b = _Bound(1.0, 1, 1.0, 1)
    elif isinstance(e, Neg):
        b = _bound(e.arg)
    elif isinstance(e, BinOp):
        l, r = _bound(e.left), _bound(e.right)
        b = _mul(l, r) if e.op == "*" else _add(l, r)
    elif isinstance(e, Pow):
        base = _bound(e.base)
        b = _Bound(0.0, 0, 1.0, 0)
        for _ in range(e.exponent):
            b = base if b.A == 1.0 and b.C == 0 and b.p == 0 else _mul(b, base)
    else:
        a = [_bound(x) for x in e.args]
        if e.name == "abs":
            b = a[0]
        elif e.name in ("sin", "cos"):
            b = _Bound(a[0].C, a[0].d, 1.0, 0)
        elif e.name == "exp":
            k = math.exp(EXP_CLAMP)
            b = _Bound(k * a[0].C, a[0].d, k, 0)
        elif e.name in ("min", "max"):
            b = _maxlike(a[0], a[1])
        else:  # call / put: max(+-(e - K), 0)
            b = _maxlike(_add(a[0], a[1]), _Bound(0.0, 0, 0.0, 0))
    if b.d > MAX_GROWTH:
        raise PayoffSyntaxError(f"growth envelope degree {b.d} exceeds {MAX_GROWTH}", e.pos)
    return b


def envelope(e: Expr) -> Envelope:
    b = _bound(e)
    return Envelope(b.C, b.d)


def to_payoff(src: str, times) -> CylinderPayoff:
    """CylinderPayoff whose phi is the expression, variables being the increments."""
    e = parse(src)
    times = tuple(times)
    if arity(e) > len(times):
        raise ValueError(f"payoff uses x{arity(e)} but only {len(times)} time point(s) given")
    return CylinderPayoff(times, lambda *x: evaluate(e, *x) + np.zeros(np.broadcast(*x).shape),
                          envelope(e), to_text(e))
