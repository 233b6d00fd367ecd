"""Scalar expression mini-language for model right-hand sides.

Grammar (whitespace-insensitive)::

    sum    :=  term (('+' | '-') term)*          left-associative
    term   :=  unary (('*' | '/') unary)*        left-associative
    unary  :=  '-' unary | power
    power  :=  atom ('^' unary)?                 right-associative
    atom   :=  number | 'pi' | name | func '(' args ')' | '(' sum ')'

so '^' binds tighter than unary minus, which binds tighter than '*' and '/'.
Functions: sin, cos, exp, abs (one argument), min, max (two arguments).
Unknown identifiers parse fine and are bound at evaluation time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

Expr = Union["Num", "Const", "Var", "Neg", "BinOp", "Call"]

_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "abs": 1, "min": 2, "max": 2}


class ParseError(ValueError):
    """Syntax error, carrying the byte offset of the offending input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class EvalError(ArithmeticError):
    """Runtime evaluation failure (unbound variable, division by zero, domain)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: Expr


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple[Expr, ...]


PI = Const("pi", math.pi)


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _byte_offset(text: str, idx: int) -> int:
    return len(text[:idx].encode("utf-8"))


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = pos + (len(text[pos:]) - len(stripped))
            raise ParseError(
                f"unexpected character {stripped[0]!r}", _byte_offset(text, bad_at)
            )
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str):
        raise ParseError(message, self.peek()[2])

    def sum(self) -> Expr:
        e = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, offset = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "name":
            self.advance()
            if self.peek()[:2] == ("op", "("):
                if text not in _FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", offset)
                return self.call(text)
            if text == "pi":
                return PI
            return Var(text)
        if kind == "op" and text == "(":
            self.advance()
            e = self.sum()
            if self.peek()[:2] != ("op", ")"):
                self.fail("expected ')'")
            self.advance()
            return e
        if kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected {text!r}")

    def call(self, func: str) -> Expr:
        self.advance()  # consume '('
        args = [self.sum()]
        while self.peek()[:2] == ("op", ","):
            self.advance()
            args.append(self.sum())
        if self.peek()[:2] != ("op", ")"):
            self.fail("expected ')' in function call")
        close_offset = self.peek()[2]
        self.advance()
        if len(args) != _FUNCTIONS[func]:
            raise ParseError(
                f"{func} takes {_FUNCTIONS[func]} argument(s), got {len(args)}",
                close_offset,
            )
        return Call(func, tuple(args))


def parse_expr(text: str) -> Expr:
    """Parse an expression string into an AST."""
    p = _Parser(_tokenize(text))
    e = p.sum()
    if p.peek()[0] != "end":
        p.fail(f"unexpected {p.peek()[1]!r} after expression")
    return e


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

_CALL_IMPL: dict[str, Callable] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "abs": abs,
    "min": min,
    "max": max,
}


def eval_expr(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate an AST in IEEE double precision under the given bindings."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -eval_expr(e.arg, bindings)
    if isinstance(e, BinOp):
        a = eval_expr(e.left, bindings)
        b = eval_expr(e.right, bindings)
        try:
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                if b == 0.0:
                    raise EvalError("division by zero")
                return a / b
            v = a**b
        except EvalError:
            raise
        except ZeroDivisionError:
            raise EvalError("zero raised to a negative power") from None
        except OverflowError:
            raise EvalError("overflow") from None
        if isinstance(v, complex):
            raise EvalError("fractional power of a negative number")
        return v
    if isinstance(e, Call):
        vals = [eval_expr(a, bindings) for a in e.args]
        try:
            return float(_CALL_IMPL[e.func](*vals))
        except (ValueError, OverflowError) as err:
            raise EvalError(f"{e.func}: {err}") from None
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Expr) -> frozenset[str]:
    """Names that must be bound before evaluation (constants excluded)."""
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Call):
        out: frozenset[str] = frozenset()
        for a in e.args:
            out |= free_vars(a)
        return out
    return frozenset()


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (used to wire outputs into formulas)."""
    if isinstance(e, Var) and e.name in mapping:
        return mapping[e.name]
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, mapping) for a in e.args))
    return e


# ---------------------------------------------------------------------------
# pretty-printing (canonical form: print . parse . print is a fixpoint)
# ---------------------------------------------------------------------------

_LEVEL_SUM, _LEVEL_TERM, _LEVEL_UNARY, _LEVEL_POWER, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _fmt(e: Expr) -> tuple[str, int]:
    if isinstance(e, Num):
        if e.value < 0 or (e.value == 0 and math.copysign(1, e.value) < 0):
            return f"-{abs(e.value)!r}", _LEVEL_UNARY
        return repr(e.value), _LEVEL_ATOM
    if isinstance(e, Const):
        return e.name, _LEVEL_ATOM
    if isinstance(e, Var):
        return e.name, _LEVEL_ATOM
    if isinstance(e, Neg):
        return f"-{_child(e.arg, _LEVEL_UNARY)}", _LEVEL_UNARY
    if isinstance(e, BinOp):
        if e.op in "+-":
            lvl, rmin = _LEVEL_SUM, _LEVEL_TERM
        elif e.op in "*/":
            lvl, rmin = _LEVEL_TERM, _LEVEL_UNARY
        else:  # '^': base must be atomic, exponent may be a unary chain
            return (
                f"{_child(e.left, _LEVEL_ATOM)}^{_child(e.right, _LEVEL_UNARY)}",
                _LEVEL_POWER,
            )
        return f"{_child(e.left, lvl)} {e.op} {_child(e.right, rmin)}", lvl
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_str(a) for a in e.args)})", _LEVEL_ATOM
    raise TypeError(f"not an expression node: {e!r}")


def _child(e: Expr, minimum: int) -> str:
    s, lvl = _fmt(e)
    return s if lvl >= minimum else f"({s})"


def to_str(e: Expr) -> str:
    """Canonical textual form; parses back to a structurally equal AST."""
    return _fmt(e)[0]


# ---------------------------------------------------------------------------
# compilation (fast path for integrator right-hand sides)
# ---------------------------------------------------------------------------

def _pow_guard(a: float, b: float) -> float:
    v = a**b
    if isinstance(v, complex):
        raise EvalError("fractional power of a negative number")
    return v


_COMPILE_GLOBALS = {
    "__builtins__": {},
    "_sin": math.sin,
    "_cos": math.cos,
    "_exp": math.exp,
    "_abs": abs,
    "_min": min,
    "_max": max,
    "_pow": _pow_guard,
}


def _emit(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Num):
        return f"({e.value!r})"
    if isinstance(e, Const):
        return f"({e.value!r})"
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg, names)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            return f"_pow({_emit(e.left, names)}, {_emit(e.right, names)})"
        return f"({_emit(e.left, names)} {e.op} {_emit(e.right, names)})"
    if isinstance(e, Call):
        args = ", ".join(_emit(a, names) for a in e.args)
        return f"_{e.func}({args})"
    raise TypeError(f"not an expression node: {e!r}")


def compile_expr(e: Expr, var_order: Sequence[str]) -> Callable[..., float]:
    """Compile to a plain positional function f(v0, v1, ...) over var_order.

    Roughly an order of magnitude faster than eval_expr; both paths compute
    the same IEEE operations in the same order.
    """
    missing = free_vars(e) - set(var_order)
    if missing:
        raise ValueError(f"free variables not in var_order: {sorted(missing)}")
    names = {v: f"_v{i}" for i, v in enumerate(var_order)}
    src = f"lambda {', '.join(names[v] for v in var_order)}: {_emit(e, names)}"
    return eval(src, dict(_COMPILE_GLOBALS))


# ---------------------------------------------------------------------------
# numeric differentiation
# ---------------------------------------------------------------------------

# Cube root of machine epsilon balances truncation against roundoff for
# central differences; sqrt(eps) steps leave ~1e-8 roundoff noise, too coarse
# for the slope bounds certified downstream.
_DIFF_STEP = (2.0**-52) ** (1.0 / 3.0)


def central_diff(f: Callable[..., float], args: Sequence[float], index: int) -> float:
    """Central difference of f with respect to its index-th argument."""
    args = list(args)
    p = args[index]
    h = _DIFF_STEP * max(1.0, abs(p))
    args[index] = p + h
    hi = f(*args)
    args[index] = p - h
    lo = f(*args)
    # the realized step may differ from h by roundoff; divide by what was used
    return (hi - lo) / ((p + h) - (p - h))


def diff_expr_numeric(e: Expr, var: str, point: Mapping[str, float]) -> float:
    """Central-difference derivative of e with respect to var at point."""
    if var not in point:
        raise EvalError(f"variable {var!r} not bound at the evaluation point")
    env = dict(point)

    def f(v: float) -> float:
        env[var] = v
        return eval_expr(e, env)

    return central_diff(f, [float(point[var])], 0)
