"""
Symbolic expressions
====================

Immutable expression trees over named real coordinates: parsing,
evaluation, exact differentiation and a small rule-based simplifier.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := number | ident | func '(' expr ')' | '(' expr ')'

Exponents must fold to a constant.  There is no implicit
multiplication, so ``2x`` is a syntax error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")
MAX_SIMPLIFY_PASSES = 32


class ExprError(ValueError):
    """Base class for malformed-input errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(ArithmeticError):
    """Raised when evaluation leaves the real domain of an operation."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message}: {to_string(subexpr)}")
        self.subexpr = subexpr


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of "+-*/^"
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]

ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    end = len(text)
    while pos < end:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", end))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.index = {name: k for k, name in enumerate(variables)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, offset = self.peek()
        if text != value or kind != "op":
            raise ExprSyntaxError(f"expected {value!r}", offset)
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                e = Binary(text, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                e = Binary(text, e, self.unary())
            else:
                return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Unary("neg", self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, offset = self.peek()
        if kind == "op" and text == "^":
            self.take()
            exponent = simplify(self.unary())
            if not isinstance(exponent, Const):
                raise ExprSyntaxError("exponent must be constant", offset + 1)
            return Binary("^", base, exponent)
        return base

    def atom(self) -> Expr:
        kind, text, offset = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            if text in self.index:
                return Var(text, self.index[text])
            raise UnknownIdentifierError(text, offset)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", offset)
        raise ExprSyntaxError(f"unexpected token {text!r}", offset)


def parse(text: str, variables: Sequence[str]) -> Expr:
    """
    Parse ``text`` into an expression over the ordered coordinate names.

    Raises
    ------
    ExprSyntaxError
        On malformed input; carries the byte offset of the problem.
    UnknownIdentifierError
        When an identifier is neither a coordinate nor a known function.
    """
    for name in variables:
        if name in FUNCTIONS:
            raise ValueError(f"coordinate name {name!r} shadows a function")
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------------------
# printing


def _fmt_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        text = str(int(value))
    else:
        text = repr(value)
    if value < 0 or text.startswith("-"):
        return f"(-{text.lstrip('-')})"
    return text


def to_string(e: Expr) -> str:
    """Print ``e`` so that :func:`parse` reproduces an equal-valued tree."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{to_string(e.arg)})"
        return f"{e.op}({to_string(e.arg)})"
    return f"({to_string(e.left)} {e.op} {to_string(e.right)})"


def to_source(e: Expr, array: str = "x") -> str:
    """Python source evaluating ``e`` with coordinates read from ``array``."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"{array}[{e.index}]"
    if isinstance(e, Unary):
        inner = to_source(e.arg, array)
        if e.op == "neg":
            return f"(-{inner})"
        return f"math.{e.op}({inner})"
    left = to_source(e.left, array)
    if e.op == "^":
        c = e.right.value
        if float(c).is_integer():
            return f"({left} ** {int(c)})"
        return f"math.pow({left}, {c!r})"
    return f"({left} {e.op} {to_source(e.right, array)})"


# ---------------------------------------------------------------------------
# evaluation


def _apply_unary(op: str, a: float, node: Expr) -> float:
    if op == "neg":
        return -a
    if op == "log":
        if a <= 0.0:
            raise DomainError("log of non-positive value", node)
        return math.log(a)
    if op == "sqrt":
        if a < 0.0:
            raise DomainError("sqrt of negative value", node)
        return math.sqrt(a)
    try:
        return getattr(math, op)(a)
    except (OverflowError, ValueError) as exc:
        raise DomainError(str(exc), node) from None


def _apply_binary(op: str, a: float, b: float, node: Expr) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero", node)
        return a / b
    # pow with constant exponent
    if not float(b).is_integer() and a < 0.0:
        raise DomainError("non-integer power of negative base", node)
    if a == 0.0 and b < 0.0:
        raise DomainError("negative power of zero", node)
    try:
        return a ** b
    except OverflowError as exc:
        raise DomainError(str(exc), node) from None


def evaluate(e: Expr, point) -> float:
    """
    Evaluate ``e`` in double precision at ``point``.

    Domain violations raise :class:`DomainError` instead of producing NaN.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index >= len(point):
            raise ValueError(
                f"point has {len(point)} coordinates, {e.name!r} needs index {e.index}"
            )
        return float(point[e.index])
    if isinstance(e, Unary):
        return _apply_unary(e.op, evaluate(e.arg, point), e)
    return _apply_binary(e.op, evaluate(e.left, point), evaluate(e.right, point), e)


def free_variables(e: Expr) -> set:
    """Set of ``(name, index)`` pairs referenced by ``e``."""
    if isinstance(e, Const):
        return set()
    if isinstance(e, Var):
        return {(e.name, e.index)}
    if isinstance(e, Unary):
        return free_variables(e.arg)
    return free_variables(e.left) | free_variables(e.right)


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``var``."""
    return simplify(_d(e, var))


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Unary):
        u, du = e.arg, _d(e.arg, v)
        if e.op == "neg":
            return Unary("neg", du)
        if e.op == "sin":
            return Binary("*", Unary("cos", u), du)
        if e.op == "cos":
            return Unary("neg", Binary("*", Unary("sin", u), du))
        if e.op == "tan":
            return Binary("/", du, Binary("^", Unary("cos", u), Const(2.0)))
        if e.op == "exp":
            return Binary("*", e, du)
        if e.op == "log":
            return Binary("/", du, u)
        if e.op == "sqrt":
            return Binary("/", du, Binary("*", Const(2.0), e))
        raise ValueError(f"unknown unary op {e.op!r}")
    a, b = e.left, e.right
    if e.op in "+-":
        return Binary(e.op, _d(a, v), _d(b, v))
    if e.op == "*":
        return Binary("+", Binary("*", _d(a, v), b), Binary("*", a, _d(b, v)))
    if e.op == "/":
        if isinstance(b, Const):
            return Binary("/", _d(a, v), b)
        num = Binary("-", Binary("*", _d(a, v), b), Binary("*", a, _d(b, v)))
        return Binary("/", num, Binary("^", b, Const(2.0)))
    c = b.value
    if c == 0.0:
        return ZERO
    return Binary("*", Binary("*", Const(c), Binary("^", a, Const(c - 1.0))), _d(a, v))


# ---------------------------------------------------------------------------
# simplification


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


def _pow2(e: Expr) -> bool:
    return isinstance(e, Const) and e.value != 0.0 and abs(math.frexp(e.value)[0]) == 0.5


def _rewrite(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        a = _rewrite(e.arg)
        if isinstance(a, Const):
            try:
                return Const(_apply_unary(e.op, a.value, e))
            except DomainError:
                pass
        if e.op == "neg" and isinstance(a, Unary) and a.op == "neg":
            return a.arg
        return Unary(e.op, a)

    a, b = _rewrite(e.left), _rewrite(e.right)
    op = e.op
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            return Const(_apply_binary(op, a.value, b.value, e))
        except DomainError:
            return Binary(op, a, b)
    if op == "+":
        if _is(a, 0.0):
            return b
        if _is(b, 0.0):
            return a
    elif op == "-":
        if _is(b, 0.0):
            return a
        if _is(a, 0.0):
            return Unary("neg", b)
    elif op == "*":
        if _is(a, 0.0) or _is(b, 0.0):
            return ZERO
        if _is(a, 1.0):
            return b
        if _is(b, 1.0):
            return a
        if _is(a, -1.0):
            return Unary("neg", b)
        if _is(b, -1.0):
            return Unary("neg", a)
    elif op == "/":
        if _is(b, 1.0):
            return a
        if _is(a, 0.0):
            return ZERO
        # scaling by powers of two is exact, so (2*q)/2 may fold to q
        if _pow2(b) and isinstance(a, Binary) and a.op == "*":
            for c, rest in ((a.left, a.right), (a.right, a.left)):
                if _pow2(c):
                    k = c.value / b.value
                    return rest if k == 1.0 else Binary("*", Const(k), rest)
    elif op == "^":
        if _is(b, 1.0):
            return a
        if _is(b, 0.0):
            return ONE
    return Binary(op, a, b)


def simplify(e: Expr) -> Expr:
    """
    Constant folding plus identity rules, iterated to a fixed point.

    Every rule preserves the floating-point value wherever the input is
    defined, so ``evaluate(simplify(e)) == evaluate(e)`` exactly.
    """
    for _ in range(MAX_SIMPLIFY_PASSES):
        new = _rewrite(e)
        if new == e:
            break
        e = new
    if isinstance(e, Const) and e.value == 0.0:
        return ZERO
    return e


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# ---------------------------------------------------------------------------
# polynomial identity test for zero certificates

_MAX_TERMS = 4096
_MAX_POWER = 64


def _poly_mul(p, q):
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            powers = dict(m1)
            for atom, k in m2:
                powers[atom] = powers.get(atom, 0) + k
            key = tuple(sorted(powers.items()))
            out[key] = out.get(key, 0) + c1 * c2
            if len(out) > _MAX_TERMS:
                raise OverflowError
    return {k: v for k, v in out.items() if v != 0}


def _poly_add(p, q, sign=1):
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0) + sign * c
    return {k: v for k, v in out.items() if v != 0}


def _poly(e: Expr):
    # Non-polynomial subtrees become opaque atoms keyed by their printed form.
    if isinstance(e, Const):
        c = Fraction(e.value)
        return {(): c} if c != 0 else {}
    if isinstance(e, Var):
        return {((e.name, 1),): Fraction(1)}
    if isinstance(e, Unary):
        if e.op == "neg":
            return {m: -c for m, c in _poly(e.arg).items()}
        return {((to_string(simplify(e)), 1),): Fraction(1)}
    if e.op == "+":
        return _poly_add(_poly(e.left), _poly(e.right))
    if e.op == "-":
        return _poly_add(_poly(e.left), _poly(e.right), -1)
    if e.op == "*":
        return _poly_mul(_poly(e.left), _poly(e.right))
    if e.op == "/" and isinstance(e.right, Const) and e.right.value != 0.0:
        inv = 1 / Fraction(e.right.value)
        return {m: c * inv for m, c in _poly(e.left).items()}
    if e.op == "^":
        k = e.right.value
        if float(k).is_integer() and 0 <= k <= _MAX_POWER:
            base = _poly(e.left)
            out = {(): Fraction(1)}
            for _ in range(int(k)):
                out = _poly_mul(out, base)
            return out
    return {((to_string(simplify(e)), 1),): Fraction(1)}


def is_polynomial_zero(e: Expr) -> bool:
    """
    True when ``e`` expands to the zero polynomial in its atoms.

    Atoms are coordinates and non-polynomial subtrees; coefficients are
    exact rationals, so a True answer is a proof, not a numerical guess.
    """
    try:
        return not _poly(e)
    except OverflowError:
        return False


def canonical_zero(e: Expr) -> Expr:
    """Simplify ``e``; return the zero node if it is an identically-zero polynomial."""
    s = simplify(e)
    if is_zero(s) or is_polynomial_zero(s):
        return ZERO
    return s


def max_abs_on_samples(e: Expr, lo, hi, n: int = 64, seed: int = 0) -> float:
    """Largest ``|e|`` over ``n`` uniform points of the box ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    worst = 0.0
    for x in rng.uniform(lo, hi, size=(n, lo.size)):
        try:
            worst = max(worst, abs(evaluate(e, x)))
        except DomainError:
            continue
    return worst
