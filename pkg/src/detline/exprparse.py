"""Recursive-descent parser and evaluator for coefficient expressions.

Grammar (standard precedence, ``^`` right-associative, unary minus below
``^`` so that ``-x^2`` means ``-(x^2)``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | 'i' | 'pi' | 'x' | name | name '(' expr ')' | '(' expr ')'

Known calls: sin cos sinh cosh exp log sqrt abs.  Any other bare name is a
parameter reference resolved at evaluation time.  Every error carries the
character position it was raised at.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Union

from .errors import ExprError, ParseError

__all__ = ["parse_expr", "evaluate", "compile_expr", "FUNCTIONS"]

FUNCTIONS = ("sin", "cos", "sinh", "cosh", "exp", "log", "sqrt", "abs")

_CONSTANTS = {"pi": math.pi}


# --- AST nodes --------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Imag:
    pass


@dataclass(frozen=True)
class Var:
    pass  # the interval variable x


@dataclass(frozen=True)
class Param:
    name: str
    pos: int


@dataclass(frozen=True)
class Neg:
    arg: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprAst"
    right: "ExprAst"
    pos: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "ExprAst"
    pos: int


ExprAst = Union[Num, Imag, Var, Param, Neg, BinOp, Call]


# --- tokenizer --------------------------------------------------------------

_OPS = set("+-*/^(),")


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in _OPS:
            tokens.append((c, c, i))
            i += 1
        elif c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ParseError(f"bad number literal {text[i:j]!r}", position=i)
            tokens.append(("num", value, i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
        else:
            raise ParseError(f"unexpected character {c!r}", position=i)
    tokens.append(("end", None, n))
    return tokens


# --- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def advance(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, kind):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", position=tok[2])
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"trailing input {tok[1]!r}", position=tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op, _, pos = self.advance()
            node = BinOp(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op, _, pos = self.advance()
            node = BinOp(op, node, self.unary(), pos)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            _, _, pos = self.advance()
            return BinOp("^", base, self.unary(), pos)
        return base

    def atom(self):
        kind, value, pos = self.advance()
        if kind == "num":
            return Num(value)
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[0] == "(":
                if value not in FUNCTIONS:
                    raise ParseError(f"unknown function {value!r}", position=pos)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg, pos)
            if value == "i":
                return Imag()
            if value == "x":
                return Var()
            if value in _CONSTANTS:
                return Num(_CONSTANTS[value])
            return Param(value, pos)
        raise ParseError(f"unexpected token {value!r}", position=pos)


def parse_expr(text: str) -> ExprAst:
    """Parse expression text into an AST; raises ParseError with position."""
    return _Parser(text).parse()


# --- evaluation -------------------------------------------------------------

_REAL_FNS = {
    "sin": math.sin, "cos": math.cos, "sinh": math.sinh, "cosh": math.cosh,
    "exp": math.exp, "log": math.log, "sqrt": math.sqrt, "abs": abs,
}
_COMPLEX_FNS = {
    "sin": cmath.sin, "cos": cmath.cos, "sinh": cmath.sinh, "cosh": cmath.cosh,
    "exp": cmath.exp, "log": cmath.log, "sqrt": cmath.sqrt, "abs": abs,
}

_DOMAIN_EPS = 1e-300


def _is_real(v):
    return isinstance(v, float) or (isinstance(v, complex) and v.imag == 0.0)


def _canon(v):
    # drop a signed-zero imaginary part so branch cuts are approached from above
    if isinstance(v, complex) and v.imag == 0.0:
        return complex(v.real, 0.0)
    return v


def evaluate(node: ExprAst, x: float, params=None, complex_mode: bool = False) -> complex:
    """Evaluate the AST at the point ``x``.

    In real mode (default), ``log``/``sqrt`` of a nonpositive real argument
    and fractional powers of negative reals raise :class:`ExprError`; with
    ``complex_mode=True`` the principal complex branch is used instead.
    """
    params = params or {}

    def ev(n):
        if isinstance(n, Num):
            return complex(n.value)
        if isinstance(n, Imag):
            return 1j
        if isinstance(n, Var):
            return complex(x)
        if isinstance(n, Param):
            try:
                return complex(params[n.name])
            except KeyError:
                raise ExprError(f"unknown parameter {n.name!r}", position=n.pos)
        if isinstance(n, Neg):
            return -ev(n.arg)
        if isinstance(n, Call):
            v = _canon(ev(n.arg))
            if not complex_mode and _is_real(v):
                r = v.real
                if n.fn == "log" and r <= 0.0:
                    raise ExprError("log of nonpositive real value", position=n.pos)
                if n.fn == "sqrt" and r < 0.0:
                    raise ExprError("sqrt of negative real value", position=n.pos)
                return complex(_REAL_FNS[n.fn](r))
            return complex(_COMPLEX_FNS[n.fn](v))
        if isinstance(n, BinOp):
            a, b = _canon(ev(n.left)), _canon(ev(n.right))
            if n.op == "+":
                return a + b
            if n.op == "-":
                return a - b
            if n.op == "*":
                return a * b
            if n.op == "/":
                if abs(b) < _DOMAIN_EPS:
                    raise ExprError("division by zero", position=n.pos)
                return a / b
            # power
            if not complex_mode and _is_real(a) and _is_real(b):
                if a.real < 0.0 and b.real != int(b.real):
                    raise ExprError(
                        "fractional power of negative real value", position=n.pos
                    )
                if a == 0.0 and b.real < 0.0:
                    raise ExprError("zero raised to negative power", position=n.pos)
                return complex(a.real ** b.real)
            return a ** b
        raise TypeError(f"unknown AST node {n!r}")

    return ev(node)


def compile_expr(node: ExprAst, params=None, complex_mode: bool = False):
    """Return a fast ``x -> complex`` closure for repeated evaluation."""
    params = params or {}

    def build(n):
        if isinstance(n, Num):
            v = complex(n.value)
            return lambda x: v
        if isinstance(n, Imag):
            return lambda x: 1j
        if isinstance(n, Var):
            return lambda x: complex(x)
        if isinstance(n, Param):
            try:
                v = complex(params[n.name])
            except KeyError:
                raise ExprError(f"unknown parameter {n.name!r}", position=n.pos)
            return lambda x: v
        if isinstance(n, Neg):
            f = build(n.arg)
            return lambda x: -f(x)
        if isinstance(n, Call):
            f = build(n.arg)
            pos, name = n.pos, n.fn
            cfn = _COMPLEX_FNS[name]
            rfn = _REAL_FNS[name]
            if complex_mode:
                return lambda x: complex(cfn(_canon(f(x))))

            def call(x):
                v = _canon(f(x))
                if _is_real(v):
                    r = v.real
                    if name == "log" and r <= 0.0:
                        raise ExprError("log of nonpositive real value", position=pos)
                    if name == "sqrt" and r < 0.0:
                        raise ExprError("sqrt of negative real value", position=pos)
                    return complex(rfn(r))
                return complex(cfn(v))

            return call
        if isinstance(n, BinOp):
            fa, fb = build(n.left), build(n.right)
            op, pos = n.op, n.pos
            if op == "+":
                return lambda x: fa(x) + fb(x)
            if op == "-":
                return lambda x: fa(x) - fb(x)
            if op == "*":
                return lambda x: fa(x) * fb(x)
            if op == "/":

                def div(x):
                    b = fb(x)
                    if abs(b) < _DOMAIN_EPS:
                        raise ExprError("division by zero", position=pos)
                    return fa(x) / b

                return div

            def power(x):
                a, b = _canon(fa(x)), _canon(fb(x))
                if not complex_mode and _is_real(a) and _is_real(b):
                    if a.real < 0.0 and b.real != int(b.real):
                        raise ExprError(
                            "fractional power of negative real value", position=pos
                        )
                    if a == 0.0 and b.real < 0.0:
                        raise ExprError("zero raised to negative power", position=pos)
                    return complex(a.real ** b.real)
                return a ** b

            return power
        raise TypeError(f"unknown AST node {n!r}")

    return build(node)
