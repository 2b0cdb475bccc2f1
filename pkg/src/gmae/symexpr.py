"""Minimal expression trees over the jet-chart variables.

Expressions are immutable trees built from constants, variables, the four
arithmetic operations, integer powers and a handful of unary functions.
They can be parsed from text, printed back, differentiated exactly and
evaluated either node by node (with domain checking) or through a compiled
Python/numpy closure.

Grammar (whitespace insensitive, no implicit multiplication)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' integer)?
    base   := number | ident | func '(' expr ')' | '(' expr ')' | '-' base

Note that ``-x^2`` parses as ``(-x)^2`` because unary minus binds inside
``base``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

VARIABLES = ("x", "y", "z", "p", "q", "s", "t", "u", "v", "w")
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")
JET_VARS = ("x", "y", "z", "p", "q")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError):
    """Raised when evaluation leaves the domain of a sub-expression."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()
    precedence = 100

    # operator sugar; the smart constructors below fold trivial cases
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if not isinstance(n, int) or isinstance(n, bool):
            raise TypeError("exponents must be integers")
        return power(self, n)

    def __str__(self):
        return to_text(self)

    def children(self) -> tuple["Expr", ...]:
        return ()

    def free_vars(self) -> frozenset[str]:
        out: set[str] = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if isinstance(node, Var):
                out.add(node.name)
            stack.extend(node.children())
        return frozenset(out)

    def diff(self, var: str) -> "Expr":
        return diff(self, var)

    def evaluate(self, point: Mapping[str, float]) -> float:
        return evaluate(self, point)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ExprError(f"unknown variable {self.name!r}")

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, slots=True)
class Add(Expr):
    left: Expr
    right: Expr
    precedence = 1

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    left: Expr
    right: Expr
    precedence = 1

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    left: Expr
    right: Expr
    precedence = 2

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, slots=True)
class Div(Expr):
    left: Expr
    right: Expr
    precedence = 2

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 4

    def children(self):
        return (self.base,)


@dataclass(frozen=True, slots=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ExprError(f"unknown function {self.name!r}")

    def children(self):
        return (self.arg,)


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def var(name: str) -> Var:
    return Var(name)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# Smart constructors: constant folding plus 0/1 identities only.

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(b, Neg):
        return Sub(a, b.arg)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(b, Neg):
        return Add(a, b.arg)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if _is_const(a) and not (a.value == 0.0 and n < 0):
        return Const(a.value**n)
    return Pow(a, n)


def func(name: str, a: Expr) -> Expr:
    return Func(name, a)


# --------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            got = text or "end of input"
            raise ParseError(f"expected {value!r}, got {got!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        b = self.base()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, text, pos = self.take()
            if kind != "num" or not text.isdigit():
                raise ParseError(f"non-integer exponent {text!r}", pos)
            return Pow(b, sign * int(text))
        return b

    def base(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            if text in VARIABLES:
                return Var(text)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if text == "-":
            return Neg(self.base())
        raise ParseError(f"unexpected token {text or 'end of input'!r}", pos)


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree.

    Raises
    ------
    ParseError
        On syntax errors, unknown identifiers or non-integer exponents; the
        exception carries the byte offset of the offending token.
    """
    return _Parser(source).parse()


# --------------------------------------------------------------------------
# Printing

def _num_text(value: float) -> str:
    text = repr(float(value))
    if value < 0 or text.startswith("-"):
        return f"(-{text.lstrip('-')})"
    return text


def to_text(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_text(e))`` is the same function."""
    if isinstance(e, Const):
        return _num_text(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Neg):
        return f"(-{_wrap(e.arg, 4)})"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 5)}^{e.exponent}"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    left = _wrap(e.left, e.precedence)
    # right operand of - and / needs parens at equal precedence
    right = _wrap(e.right, e.precedence + (1 if isinstance(e, (Sub, Div)) else 0))
    return f"{left} {op} {right}"


def _wrap(e: Expr, min_prec: int) -> str:
    text = to_text(e)
    if isinstance(e, (Const, Var, Func, Neg)):
        return text
    if e.precedence < min_prec:
        return f"({text})"
    return text


# --------------------------------------------------------------------------
# Differentiation

def diff(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``."""
    if v not in VARIABLES:
        raise ExprError(f"unknown variable {v!r}")
    cache: dict[int, tuple] = {}
    return _diff(e, v, cache)


def _depends(e: Expr, v: str, cache: dict) -> bool:
    key = ("dep", id(e))
    hit = cache.get(key)
    if hit is None:
        if isinstance(e, Var):
            dep = e.name == v
        else:
            dep = any(_depends(c, v, cache) for c in e.children())
        hit = cache[key] = (e, dep)
    return hit[1]


def _diff(e: Expr, v: str, cache: dict) -> Expr:
    key = id(e)
    hit = cache.get(key)
    if hit is not None:
        return hit[1]
    if isinstance(e, Const):
        out = ZERO
    elif isinstance(e, Var):
        out = ONE if e.name == v else ZERO
    elif not _depends(e, v, cache):
        out = ZERO
    elif isinstance(e, Add):
        out = add(_diff(e.left, v, cache), _diff(e.right, v, cache))
    elif isinstance(e, Sub):
        out = sub(_diff(e.left, v, cache), _diff(e.right, v, cache))
    elif isinstance(e, Mul):
        out = add(
            mul(_diff(e.left, v, cache), e.right),
            mul(e.left, _diff(e.right, v, cache)),
        )
    elif isinstance(e, Div):
        da = _diff(e.left, v, cache)
        db = _diff(e.right, v, cache)
        out = sub(div(da, e.right), div(mul(e.left, db), power(e.right, 2)))
    elif isinstance(e, Neg):
        out = neg(_diff(e.arg, v, cache))
    elif isinstance(e, Pow):
        n = e.exponent
        out = mul(mul(Const(float(n)), power(e.base, n - 1)), _diff(e.base, v, cache))
    elif isinstance(e, Func):
        a = e.arg
        da = _diff(a, v, cache)
        outer = {
            "sin": lambda: Func("cos", a),
            "cos": lambda: neg(Func("sin", a)),
            "exp": lambda: e,
            "log": lambda: div(ONE, a),
            "sqrt": lambda: div(ONE, mul(Const(2.0), e)),
            "abs": lambda: div(a, e),
        }[e.name]()
        out = mul(outer, da)
    else:  # pragma: no cover
        raise ExprError(f"cannot differentiate {e!r}")
    cache[key] = (e, out)
    return out


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (no simplification beyond folding)."""
    if isinstance(e, Var):
        return as_expr(mapping[e.name]) if e.name in mapping else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return add(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Sub):
        return sub(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Mul):
        return mul(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Div):
        return div(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    raise ExprError(f"cannot substitute into {e!r}")  # pragma: no cover


# --------------------------------------------------------------------------
# Evaluation

def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate ``e`` at ``point`` with domain checking.

    Raises
    ------
    UnboundVariableError
        A free variable of ``e`` has no binding.
    DomainError
        Division by zero, log of a non-positive number, sqrt of a negative
        number, or a non-finite intermediate; carries the offending node.
    """
    return _eval(e, point, None)


def evaluate_with_scale(e: Expr, point: Mapping[str, float]) -> tuple[float, float]:
    """Evaluate ``e`` and also return the largest |value| of any subterm."""
    track = [0.0]
    value = _eval(e, point, track)
    return value, track[0]


def _eval(e: Expr, point, track) -> float:
    if isinstance(e, Const):
        val = e.value
    elif isinstance(e, Var):
        try:
            val = float(point[e.name])
        except KeyError:
            raise UnboundVariableError(f"variable {e.name!r} is not bound") from None
    elif isinstance(e, Add):
        val = _eval(e.left, point, track) + _eval(e.right, point, track)
    elif isinstance(e, Sub):
        val = _eval(e.left, point, track) - _eval(e.right, point, track)
    elif isinstance(e, Mul):
        val = _eval(e.left, point, track) * _eval(e.right, point, track)
    elif isinstance(e, Div):
        num = _eval(e.left, point, track)
        den = _eval(e.right, point, track)
        if den == 0.0:
            raise DomainError("division by zero", e)
        val = num / den
    elif isinstance(e, Neg):
        val = -_eval(e.arg, point, track)
    elif isinstance(e, Pow):
        b = _eval(e.base, point, track)
        if b == 0.0 and e.exponent < 0:
            raise DomainError("division by zero", e)
        val = b**e.exponent
    elif isinstance(e, Func):
        a = _eval(e.arg, point, track)
        name = e.name
        if name == "log" and a <= 0.0:
            raise DomainError("log of non-positive value", e)
        if name == "sqrt" and a < 0.0:
            raise DomainError("sqrt of negative value", e)
        try:
            val = _MATH[name](a)
        except OverflowError:
            raise DomainError("overflow", e) from None
    else:  # pragma: no cover
        raise ExprError(f"cannot evaluate {e!r}")
    if not math.isfinite(val):
        raise DomainError("non-finite value", e)
    if track is not None and abs(val) > track[0]:
        track[0] = abs(val)
    return val


_MATH = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def _pysource(e: Expr, mod: str) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        name = "fabs" if (e.name == "abs" and mod == "math") else e.name
        if e.name == "abs" and mod == "np":
            name = "abs"
        return f"{mod}.{name}({_pysource(e.arg, mod)})"
    if isinstance(e, Neg):
        return f"(-{_pysource(e.arg, mod)})"
    if isinstance(e, Pow):
        return f"({_pysource(e.base, mod)})**({e.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"({_pysource(e.left, mod)} {op} {_pysource(e.right, mod)})"


def compile_expr(e: Expr, args: Iterable[str] = JET_VARS, vectorized: bool = False) -> Callable:
    """Compile ``e`` to a Python function of the positional ``args``.

    The scalar variant raises ``ZeroDivisionError``/``ValueError`` on domain
    errors; the vectorized variant follows numpy semantics (inf/nan).
    """
    args = tuple(args)
    missing = e.free_vars() - set(args)
    if missing:
        raise UnboundVariableError(f"variables {sorted(missing)} are not arguments")
    mod = "np" if vectorized else "math"
    body = _pysource(e, mod)
    if vectorized:
        # constants must broadcast to the argument shape
        body = f"({body}) + 0.0 * ({' + '.join(args) if args else '0.0'})"
    src = f"def _f({', '.join(args)}):\n    return {body}\n"
    namespace = {"math": math, "np": np}
    exec(src, namespace)  # noqa: S102 - source is generated from a checked tree
    fn = namespace["_f"]
    fn.__doc__ = to_text(e)
    return fn


# --------------------------------------------------------------------------
# Probabilistic zero test

Box = Mapping[str, tuple[float, float]]

DEFAULT_BOX: dict[str, tuple[float, float]] = {v: (1.0, 2.0) for v in JET_VARS}


def sample_point(box: Box, rng: np.random.Generator) -> dict[str, float]:
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in box.items()}


def is_identically_zero(
    e: Expr,
    box: Box | None = None,
    samples: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
    retry_factor: int = 10,
    points: Iterable[Mapping[str, float]] | None = None,
) -> bool:
    """Decide by random sampling whether ``e`` vanishes on ``box``.

    The verdict is probabilistic: ``True`` means that at every drawn sample
    ``|e| <= tol * (1 + scale)``, where ``scale`` is the largest absolute
    value of any subterm at that sample. Samples that hit a domain error are
    skipped and redrawn, up to ``retry_factor * samples`` draws in total.
    Extra fixed ``points`` are checked as well (domain errors there raise).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    box = dict(DEFAULT_BOX if box is None else box)
    for v in e.free_vars() - set(box):
        raise UnboundVariableError(f"variable {v!r} has no range in the box")
    rng = np.random.default_rng(seed)
    for pt in points or ():
        value, scale = evaluate_with_scale(e, pt)
        if abs(value) > tol * (1.0 + scale):
            return False
    good = 0
    draws = 0
    while good < samples:
        if draws >= retry_factor * samples:
            raise DomainError(
                f"only {good} of {samples} samples were evaluable; domain too singular", e
            )
        draws += 1
        pt = sample_point(box, rng)
        try:
            value, scale = evaluate_with_scale(e, pt)
        except DomainError:
            continue
        good += 1
        if abs(value) > tol * (1.0 + scale):
            return False
    return True
