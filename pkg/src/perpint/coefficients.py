"""Coefficient expressions in one free variable ``y``.

A deliberately small language covers every drift, diffusion coefficient and
integrand used by the toolkit::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := ('-'|'+') unary | factor
    factor := atom ['^' exponent]
    atom   := number | 'y' | '(' expr ')' | func '(' expr [',' expr] ')'
    func   := exp | log | sqrt | abs | min | max

The exponent of ``^`` must be a constant: a number, optionally signed, or a
parenthesised expression free of ``y`` (``y^(0.3)``, ``y^(-1/2)``).

Besides parsing and evaluation the module extracts power-law asymptotics
near a boundary point, either symbolically from the tree or by a log-log fit.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = [
    "AsymptoticExponent",
    "CoefficientExpr",
    "DomainError",
    "ParseError",
    "Series",
    "asymptotic_series",
    "eval_expr",
    "eval_near",
    "exponent_at",
    "parse_expr",
    "to_source",
]

FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2}


class ParseError(ValueError):
    """Malformed expression text.

    ``offset`` is the 1-based column of the offending character and
    ``expected`` describes what the parser was looking for.
    """

    def __init__(self, message: str, offset: int, expected: str = ""):
        self.offset = offset
        self.expected = expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class DomainError(ArithmeticError):
    """Expression evaluated outside its natural domain."""


# --------------------------------------------------------------------------
# Expression tree


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0.0):
            raise ValueError("constants are finite and non-negative; use Neg")


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Const, Var, Neg, BinOp, Pow, Call]


@dataclass(frozen=True)
class CoefficientExpr:
    """Parsed expression; immutable and safe to share between workers."""

    root: Node
    source_text: str

    def __call__(self, y):
        return eval_expr(self, y)

    def pretty(self) -> str:
        return _pretty(self.root)

    def __str__(self) -> str:
        return self.source_text

    @property
    def is_constant(self) -> bool:
        return not _has_var(self.root)


# --------------------------------------------------------------------------
# Tokenizer and parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos + 1, "token")
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind != "op":
            got = val or "end of input"
            raise ParseError(f"unexpected {got!r}", off, repr(value))

    def parse(self) -> Node:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", off, "operator or end of input")
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
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.factor()

    def factor(self) -> Node:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> float:
        kind, val, off = self.peek()
        sign = 1.0
        if kind == "op" and val in ("-", "+"):
            self.take()
            sign = -1.0 if val == "-" else 1.0
            kind, val, off = self.peek()
        if kind == "num":
            self.take()
            return sign * float(val)
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            if _has_var(node):
                raise ParseError("exponent must be constant", off, "constant exponent")
            return sign * _eval_scalar(node, 0.0)
        got = val or "end of input"
        raise ParseError(f"unexpected {got!r}", off, "number or '('")

    def atom(self) -> Node:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val == "y":
                return Var()
            if val not in FUNCTIONS:
                raise ParseError(f"unknown identifier {val!r}", off, "'y' or a function name")
            self.expect("(")
            args = [self.expr()]
            while self.peek()[1] == "," and self.peek()[0] == "op":
                self.take()
                args.append(self.expr())
            kind2, val2, off2 = self.peek()
            if val2 != ")":
                raise ParseError(f"unexpected {val2 or 'end of input'!r}", off2, "')'")
            self.take()
            if len(args) != FUNCTIONS[val]:
                raise ParseError(
                    f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}",
                    off,
                    f"{FUNCTIONS[val]} argument(s)",
                )
            return Call(val, tuple(args))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        got = val or "end of input"
        raise ParseError(f"unexpected {got!r}", off, "number, 'y', function or '('")


def parse_expr(text: str) -> CoefficientExpr:
    """Parse ``text`` into a :class:`CoefficientExpr`.

    >>> parse_expr("sqrt(y)").root
    Call(name='sqrt', args=(Var(),))
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 1, "expression")
    return CoefficientExpr(_Parser(text).parse(), text)


def _has_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Const):
        return False
    if isinstance(node, Neg):
        return _has_var(node.arg)
    if isinstance(node, BinOp):
        return _has_var(node.left) or _has_var(node.right)
    if isinstance(node, Pow):
        return _has_var(node.base)
    return any(_has_var(a) for a in node.args)


def _pretty(node: Node) -> str:
    # Fully parenthesised so that re-parsing rebuilds the identical tree.
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return "y"
    if isinstance(node, Neg):
        return f"(-{_pretty(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_pretty(node.left)} {node.op} {_pretty(node.right)})"
    if isinstance(node, Pow):
        return f"{_pretty_atom(node.base)}^({node.exponent!r})"
    return f"{node.name}(" + ", ".join(_pretty(a) for a in node.args) + ")"


def _pretty_atom(node: Node) -> str:
    text = _pretty(node)
    if isinstance(node, (Const, Var, Call)) or text.startswith("("):
        return text
    return f"({text})"


# --------------------------------------------------------------------------
# Evaluation


def _eval_scalar(node: Node, y: float) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return y
    if isinstance(node, Neg):
        return -_eval_scalar(node.arg, y)
    if isinstance(node, BinOp):
        a = _eval_scalar(node.left, y)
        b = _eval_scalar(node.right, y)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise DomainError(f"division by zero at y={y!r}")
        return a / b
    if isinstance(node, Pow):
        a = _eval_scalar(node.base, y)
        p = node.exponent
        if a < 0.0 and not float(p).is_integer():
            raise DomainError(f"negative base to non-integer power at y={y!r}")
        if a == 0.0 and p < 0.0:
            raise DomainError(f"division by zero at y={y!r}")
        try:
            return math.pow(a, p)
        except OverflowError:
            raise DomainError(f"overflow at y={y!r}") from None
    args = [_eval_scalar(a, y) for a in node.args]
    name = node.name
    if name == "exp":
        try:
            return math.exp(args[0])
        except OverflowError:
            raise DomainError(f"overflow in exp at y={y!r}") from None
    if name == "log":
        if args[0] <= 0.0:
            raise DomainError(f"log of non-positive value at y={y!r}")
        return math.log(args[0])
    if name == "sqrt":
        if args[0] < 0.0:
            raise DomainError(f"sqrt of negative value at y={y!r}")
        return math.sqrt(args[0])
    if name == "abs":
        return abs(args[0])
    if name == "min":
        return min(args[0], args[1])
    return max(args[0], args[1])


def _eval_array(node: Node, y: np.ndarray, near=None) -> np.ndarray:
    if near is not None and isinstance(node, BinOp) and node.op == "-":
        left, right = near
        if (
            right is not None
            and isinstance(node.left, Const)
            and isinstance(node.right, Var)
            and node.left.value == right[0]
        ):
            return right[1]
        if (
            left is not None
            and isinstance(node.left, Var)
            and isinstance(node.right, Const)
            and node.right.value == left[0]
        ):
            return left[1]
    if isinstance(node, Const):
        return np.full_like(y, node.value)
    if isinstance(node, Var):
        return y
    if isinstance(node, Neg):
        return -_eval_array(node.arg, y, near)
    if isinstance(node, BinOp):
        a = _eval_array(node.left, y, near)
        b = _eval_array(node.right, y, near)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Pow):
        a = _eval_array(node.base, y, near)
        p = node.exponent
        if float(p).is_integer():
            return np.power(a, p)
        return np.where(a >= 0.0, np.power(np.abs(a), p), np.nan)
    args = [_eval_array(a, y, near) for a in node.args]
    name = node.name
    if name == "exp":
        return np.exp(args[0])
    if name == "log":
        return np.where(args[0] > 0.0, np.log(np.abs(args[0])), np.nan)
    if name == "sqrt":
        return np.where(args[0] >= 0.0, np.sqrt(np.abs(args[0])), np.nan)
    if name == "abs":
        return np.abs(args[0])
    if name == "min":
        return np.minimum(args[0], args[1])
    return np.maximum(args[0], args[1])


def eval_expr(e: CoefficientExpr, y, strict: bool = True):
    """Evaluate ``e`` at a float or an array of points.

    With ``strict`` a :class:`DomainError` is raised whenever a point falls
    outside the natural domain (or the result overflows); otherwise those
    entries come back as NaN.
    """
    if np.ndim(y) == 0:
        try:
            return _eval_scalar(e.root, float(y))
        except DomainError:
            if strict:
                raise
            return math.nan
    arr = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        out = np.asarray(_eval_array(e.root, arr), dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        if strict:
            where = arr[bad][0]
            raise DomainError(f"{e.source_text!r} undefined or non-finite at y={where!r}")
        out = np.where(bad, np.nan, out)
    return out


def eval_near(e: CoefficientExpr, y, left=None, right=None) -> np.ndarray:
    """Vectorised evaluation with exact boundary distances.

    ``left=(a, dl)`` replaces every ``y - a`` by the array ``dl`` and
    ``right=(b, dr)`` every ``b - y`` by ``dr``. Points outside the natural
    domain yield NaN; callers decide how to treat them.
    """
    arr = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval_array(e.root, arr, (left, right))
    return np.broadcast_to(np.asarray(out, dtype=float), arr.shape).copy()


# --------------------------------------------------------------------------
# Generalised power series near a boundary


_REL_ZERO = 1e-12
_HORIZON = 4.0
_MAX_TERMS = 16
_BEYOND = 1e6


class Series:
    """Truncated expansion ``sum c_k u^e_k + O(u^order)`` as ``u -> 0+``.

    Exponents may be any reals. ``order = inf`` means the expansion is exact.
    An empty term list with finite order means the leading behaviour is
    unknown (typically after a cancellation).
    """

    __slots__ = ("terms", "order")

    def __init__(self, terms, order=math.inf):
        merged: dict = {}
        scale: dict = {}
        for e, c in terms:
            key = round(float(e), 10)
            merged[key] = merged.get(key, 0.0) + c
            scale[key] = scale.get(key, 0.0) + abs(c)
        items = sorted(
            (e, c) for e, c in merged.items() if abs(c) > _REL_ZERO * scale[e] and e < order
        )
        if items:
            order = min(order, items[0][0] + _HORIZON)
            items = [t for t in items if t[0] < order]
            if len(items) > _MAX_TERMS:
                order = items[_MAX_TERMS][0]
                items = items[:_MAX_TERMS]
        self.terms = tuple(items)
        self.order = order

    @classmethod
    def const(cls, c: float) -> "Series":
        return cls([(0.0, c)])

    @property
    def is_zero(self) -> bool:
        return not self.terms and self.order == math.inf

    @property
    def known(self) -> bool:
        return bool(self.terms) or self.order == math.inf

    @property
    def lead(self):
        return self.terms[0] if self.terms else None

    def _lead_exp(self) -> float:
        return self.terms[0][0] if self.terms else self.order

    def __add__(self, other: "Series") -> "Series":
        return Series(self.terms + other.terms, min(self.order, other.order))

    def __neg__(self) -> "Series":
        return Series([(e, -c) for e, c in self.terms], self.order)

    def __sub__(self, other: "Series") -> "Series":
        return self + (-other)

    def scale(self, k: float) -> "Series":
        if k == 0.0:
            return Series([])
        return Series([(e, k * c) for e, c in self.terms], self.order)

    def __mul__(self, other: "Series") -> "Series":
        if self.is_zero or other.is_zero:
            return Series([])
        terms = [(e1 + e2, c1 * c2) for e1, c1 in self.terms for e2, c2 in other.terms]
        order = min(self.order + other._lead_exp(), other.order + self._lead_exp())
        return Series(terms, order)

    def _split(self):
        """Return (c, e, R) with self = c u^e (1 + R), R of positive exponents."""
        c, e = self.terms[0][1], self.terms[0][0]
        rest = Series([(ek - e, ck / c) for ek, ck in self.terms[1:]], self.order - e)
        return c, e, rest

    def _compose(self, coeffs_fn, max_k: int = 60) -> "Series":
        """sum_k a_k R^k for a series R with strictly positive exponents."""
        if self.is_zero:
            return Series.const(coeffs_fn(0))
        r = self._lead_exp()
        if r <= 0:
            raise ValueError("composition needs a vanishing argument")
        need = min(self.order, _HORIZON)
        kmax = min(max_k, int(math.ceil(need / r)) + 1)
        total = Series.const(coeffs_fn(0))
        power = Series.const(1.0)
        for k in range(1, kmax + 1):
            power = power * self
            if power._lead_exp() >= need:
                break
            total = total + power.scale(coeffs_fn(k))
        cut = min(need, (kmax + 1) * r)
        return Series(total.terms, min(total.order, cut))

    def power(self, p: float) -> Optional["Series"]:
        if self.is_zero:
            return Series([]) if p > 0 else None
        if not self.terms:
            return None
        c, e, rest = self._split()
        if c < 0 and not float(p).is_integer():
            return None
        coeff = math.copysign(abs(c) ** p, 1.0 if c > 0 or int(p) % 2 == 0 else -1.0)

        def binom(k, p=p):
            out = 1.0
            for j in range(k):
                out *= (p - j) / (j + 1)
            return out

        body = rest._compose(binom)
        return Series([(ek + p * e, coeff * ck) for ek, ck in body.terms], body.order + p * e)

    def reciprocal(self) -> Optional["Series"]:
        return self.power(-1.0)

    def exp(self) -> Optional["Series"]:
        if self.is_zero:
            return Series.const(1.0)
        if not self.terms:
            return None
        if self.terms[0][0] < 0:
            if self.terms[0][1] < 0:
                # exponentially small: below every power of u
                return Series([], _BEYOND)
            return None
        a0 = sum(c for e, c in self.terms if e == 0.0)
        rest = Series([(e, c) for e, c in self.terms if e != 0.0], self.order)
        if rest.is_zero:
            return Series.const(math.exp(a0))
        if not rest.terms:
            return None
        body = rest._compose(lambda k: 1.0 / math.factorial(k))
        return body.scale(math.exp(a0))

    def log(self) -> Optional["Series"]:
        if not self.terms:
            return None
        c, e, rest = self._split()
        if e != 0.0 or c <= 0:
            return None
        body = rest._compose(lambda k: 0.0 if k == 0 else (-1.0) ** (k + 1) / k)
        return body + Series.const(math.log(c))

    def sign(self) -> Optional[float]:
        if not self.terms:
            return None
        return math.copysign(1.0, self.terms[0][1])

    def __repr__(self) -> str:
        return f"Series({list(self.terms)}, order={self.order})"


def _series(node: Node, var: Series) -> Optional[Series]:
    if isinstance(node, Const):
        return Series.const(node.value)
    if isinstance(node, Var):
        return var
    if isinstance(node, Neg):
        s = _series(node.arg, var)
        return None if s is None else -s
    if isinstance(node, BinOp):
        a = _series(node.left, var)
        b = _series(node.right, var)
        if a is None or b is None:
            return None
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        inv = b.reciprocal()
        return None if inv is None else a * inv
    if isinstance(node, Pow):
        s = _series(node.base, var)
        return None if s is None else s.power(node.exponent)
    args = [_series(a, var) for a in node.args]
    if any(a is None for a in args):
        return None
    name = node.name
    if name == "exp":
        return args[0].exp()
    if name == "log":
        return args[0].log()
    if name == "sqrt":
        return args[0].power(0.5)
    if name == "abs":
        if args[0].is_zero:
            return args[0]
        sg = args[0].sign()
        return None if sg is None else args[0].scale(sg)
    diff = args[0] - args[1]
    if diff.is_zero:
        return args[0]
    sg = diff.sign()
    if sg is None:
        return None
    if name == "min":
        return args[1] if sg > 0 else args[0]
    return args[0] if sg > 0 else args[1]


def boundary_variable(boundary: float, side: int) -> Series:
    """Series for ``y`` in the local coordinate ``u`` at ``boundary``.

    Finite boundaries use ``y = boundary + side*u``; ``+inf`` uses ``y = 1/u``.
    """
    if math.isinf(boundary):
        return Series([(-1.0, 1.0)])
    return Series([(0.0, float(boundary)), (1.0, float(side))])


def asymptotic_series(e: CoefficientExpr, boundary: float, side: int = 1) -> Optional[Series]:
    """Expansion of ``e`` in the local coordinate at ``boundary`` (or None)."""
    try:
        s = _series(e.root, boundary_variable(boundary, side))
    except (OverflowError, ValueError, ZeroDivisionError):
        return None
    if s is None or not s.known:
        return None
    return s


# --------------------------------------------------------------------------
# Asymptotic exponents


@dataclass(frozen=True)
class AsymptoticExponent:
    """``e(y) ~ leading_coeff * d^exponent`` near ``boundary``.

    ``d`` is the distance ``|y - boundary|`` for finite boundaries and ``y``
    itself at ``+inf``. ``exact`` marks a symbolic derivation; a zero
    function is reported with ``exponent = inf``.
    """

    boundary: float
    exponent: float
    leading_coeff: float
    exact: bool


def _fit_exponent(e: CoefficientExpr, boundary: float, side: int, ks) -> Optional[AsymptoticExponent]:
    ks = np.asarray(list(ks), dtype=float)
    if math.isinf(boundary):
        d = np.exp2(ks)
        y = d
    else:
        d = np.exp2(-ks)
        y = boundary + side * d
    vals = eval_expr(e, y, strict=False)
    if not np.all(np.isfinite(vals)) or np.any(vals == 0.0):
        return None
    signs = np.sign(vals)
    if not np.all(signs == signs[0]):
        return None
    x = np.log(d)
    z = np.log(np.abs(vals))
    slope, intercept = np.polyfit(x, z, 1)
    resid = z - (slope * x + intercept)
    if np.max(np.abs(resid)) >= 1e-3:
        return None
    return AsymptoticExponent(boundary, float(slope), float(signs[0] * math.exp(intercept)), False)


def exponent_at(
    e: CoefficientExpr, boundary: float, side: Optional[int] = None
) -> Optional[AsymptoticExponent]:
    """Power-law behaviour of ``e`` near ``boundary``.

    ``side`` is +1 when ``y`` approaches a finite boundary from above and -1
    from below (default +1). Symbolic extraction is tried first; otherwise
    the exponent is fitted on ``d = 2^-k``, ``k = 16..30`` and accepted when
    the log-log residual stays below 1e-3. Returns None when neither route
    yields a power law (oscillation, exponential or logarithmic factors).
    """
    if side is None:
        side = 1
    s = asymptotic_series(e, boundary, side)
    if s is not None:
        if s.is_zero:
            return AsymptoticExponent(boundary, math.inf, 0.0, True)
        ex, c = s.lead
        if math.isinf(boundary):
            ex = -ex
        return AsymptoticExponent(boundary, float(ex), float(c), True)
    return _fit_exponent(e, boundary, side, range(16, 31))


# --------------------------------------------------------------------------
# Source generation for compiled simulation kernels


def to_source(e: CoefficientExpr, var: str = "y", left=None, right=None) -> str:
    """Python source (``math`` module calls) computing ``e``.

    ``left=(a, name)`` / ``right=(b, name)`` substitute an accurately known
    distance to a boundary: ``y - a`` becomes ``name`` and ``b - y`` becomes
    the right-hand name, which keeps quantities such as ``1 - y`` exact
    when ``y`` sits within rounding distance of ``b``.
    """

    def gen(node: Node) -> str:
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Var):
            return var
        if isinstance(node, Neg):
            return f"(-{gen(node.arg)})"
        if isinstance(node, BinOp):
            if node.op == "-":
                if (
                    right is not None
                    and isinstance(node.left, Const)
                    and isinstance(node.right, Var)
                    and node.left.value == right[0]
                ):
                    return right[1]
                if (
                    left is not None
                    and isinstance(node.left, Var)
                    and isinstance(node.right, Const)
                    and node.right.value == left[0]
                ):
                    return left[1]
            return f"({gen(node.left)} {node.op} {gen(node.right)})"
        if isinstance(node, Pow):
            p = node.exponent
            if float(p).is_integer():
                return f"({gen(node.base)} ** {int(p)})"
            return f"_pow({gen(node.base)}, {p!r})"
        args = ", ".join(gen(a) for a in node.args)
        if node.name in ("exp", "log", "sqrt"):
            return f"math.{node.name}({args})"
        return f"{node.name}({args})"

    return gen(e.root)
