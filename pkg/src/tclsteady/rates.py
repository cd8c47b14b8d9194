"""Scalar rate functions f(t) and the rate-expression language.

Expressions use numbers, the variable ``t``, ``+ - * /``, unary minus,
parentheses and the functions ``sin cos exp tanh`` (one argument) and
``pow`` (two arguments).
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

QUAD_TOL = 1e-10
# Panels keep adaptive Simpson from being fooled by oscillating integrands.
QUAD_PANEL = 1.0

FUNCTIONS: dict[str, tuple[int, Callable[..., Any]]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "pow": (2, np.power),
}


class RateExpressionError(ValueError):
    """Syntax or semantic error in a rate expression."""

    def __init__(self, message: str, text: str, position: int, expected: Sequence[str] = ()):
        self.text = text
        self.position = position
        self.expected = tuple(expected)
        detail = f"{message} at position {position}"
        if expected:
            detail += f", expected {' or '.join(repr(e) for e in expected)}"
        super().__init__(detail)


class RateEvaluationError(ValueError):
    pass


# --------------------------------------------------------------------------
# Expression syntax tree
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


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
class Call:
    name: str
    args: tuple["Node", ...]


Node = Num | Var | Neg | BinOp | Call

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise RateExpressionError(f"unexpected character {text[start]!r}", text, start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: Sequence[str]):
        kind, value, pos = self.peek()
        found = "end of input" if kind == "end" else f"{value!r}"
        raise RateExpressionError(f"syntax error: unexpected {found}", self.text, pos, expected)

    def expect(self, value: str):
        kind, v, _ = self.peek()
        if kind == "op" and v == value:
            return self.advance()
        self.fail([value])

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(["+", "-", "*", "/", "end of input"])
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, v, _ = self.peek()
        if kind == "op" and v == "-":
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, v, pos = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(v))
        if kind == "ident":
            self.advance()
            if v == "t":
                return Var()
            if v not in FUNCTIONS:
                raise RateExpressionError(f"unknown identifier {v!r}", self.text, pos)
            arity = FUNCTIONS[v][0]
            self.expect("(")
            args = [self.expr()]
            while self.peek()[0] == "op" and self.peek()[1] == ",":
                self.advance()
                args.append(self.expr())
            self.expect(")")
            if len(args) != arity:
                raise RateExpressionError(
                    f"function {v!r} takes {arity} argument(s), got {len(args)}", self.text, pos)
            return Call(v, tuple(args))
        if kind == "op" and v == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(["number", "t", "function", "(", "-"])


def parse_expression(text: str) -> Node:
    """Parse rate-expression text into a syntax tree."""
    return _Parser(text).parse()


def to_text(node: Node) -> str:
    """Render a syntax tree as text that parses back to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    return f"{node.name}({', '.join(to_text(a) for a in node.args)})"


def evaluate(node: Node, t):
    """Evaluate a syntax tree at scalar or array ``t``."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t
    if isinstance(node, Neg):
        return -evaluate(node.arg, t)
    if isinstance(node, BinOp):
        a = evaluate(node.left, t)
        b = evaluate(node.right, t)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    return FUNCTIONS[node.name][1](*(evaluate(a, t) for a in node.args))


def depends_on_t(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return depends_on_t(node.arg)
    if isinstance(node, BinOp):
        return depends_on_t(node.left) or depends_on_t(node.right)
    return any(depends_on_t(a) for a in node.args)


def _const(node: Node) -> float | None:
    if depends_on_t(node):
        return None
    with np.errstate(all="ignore"):
        v = float(evaluate(node, 0.0))
    return v if math.isfinite(v) else None


def _linear(node: Node) -> tuple[float, float] | None:
    """Return (a, b) if the node equals ``a*t + b``."""
    c = _const(node)
    if c is not None:
        return 0.0, c
    if isinstance(node, Var):
        return 1.0, 0.0
    if isinstance(node, Neg):
        inner = _linear(node.arg)
        return None if inner is None else (-inner[0], -inner[1])
    if isinstance(node, BinOp):
        if node.op in "+-":
            left, right = _linear(node.left), _linear(node.right)
            if left is None or right is None:
                return None
            s = 1.0 if node.op == "+" else -1.0
            return left[0] + s * right[0], left[1] + s * right[1]
        if node.op == "*":
            for lin, other in ((node.left, node.right), (node.right, node.left)):
                c = _const(other)
                inner = _linear(lin)
                if c is not None and inner is not None:
                    return c * inner[0], c * inner[1]
            return None
        c = _const(node.right)
        inner = _linear(node.left)
        if c and inner is not None:
            return inner[0] / c, inner[1] / c
    return None


def _num(x: float) -> Node:
    return Num(x) if x >= 0 else Neg(Num(-x))


def _lin_node(a: float, b: float) -> Node:
    return BinOp("+", BinOp("*", _num(a), Var()), _num(b))


def antiderivative(node: Node) -> Node | None:
    """Symbolic antiderivative for sums of constants, ``t`` and sin/cos/exp of linear arguments.

    Returns ``None`` when the expression is outside that class. The result
    is some antiderivative ``G``; callers use ``G(t) - G(0)``.
    """
    c = _const(node)
    if c is not None:
        return BinOp("*", _num(c), Var())
    if isinstance(node, Var):
        return BinOp("*", Num(0.5), BinOp("*", Var(), Var()))
    if isinstance(node, Neg):
        inner = antiderivative(node.arg)
        return None if inner is None else Neg(inner)
    if isinstance(node, BinOp):
        if node.op in "+-":
            left, right = antiderivative(node.left), antiderivative(node.right)
            if left is None or right is None:
                return None
            return BinOp(node.op, left, right)
        if node.op == "*":
            for const_side, other in ((node.left, node.right), (node.right, node.left)):
                c = _const(const_side)
                if c is not None:
                    inner = antiderivative(other)
                    return None if inner is None else BinOp("*", _num(c), inner)
            return None
        c = _const(node.right)
        if c:
            inner = antiderivative(node.left)
            return None if inner is None else BinOp("/", inner, _num(c))
        return None
    if isinstance(node, Call) and node.name in ("sin", "cos", "exp"):
        lin = _linear(node.args[0])
        if lin is None or lin[0] == 0.0:
            return None
        a, b = lin
        arg = _lin_node(a, b)
        if node.name == "sin":
            return BinOp("/", Neg(Call("cos", (arg,))), _num(a))
        if node.name == "cos":
            return BinOp("/", Call("sin", (arg,)), _num(a))
        return BinOp("/", Call("exp", (arg,)), _num(a))
    return None


def mean_slope(node: Node) -> float | None:
    """Slope ``s`` such that the integral over [0, t] is ``s*t`` plus a bounded term.

    Only decided for combinations of constants, sin/cos of non-constant
    linear arguments and decaying exponentials; ``None`` otherwise.
    """
    c = _const(node)
    if c is not None:
        return c
    if isinstance(node, Neg):
        s = mean_slope(node.arg)
        return None if s is None else -s
    if isinstance(node, BinOp):
        if node.op in "+-":
            left, right = mean_slope(node.left), mean_slope(node.right)
            if left is None or right is None:
                return None
            return left + right if node.op == "+" else left - right
        if node.op == "*":
            for const_side, other in ((node.left, node.right), (node.right, node.left)):
                c = _const(const_side)
                if c is not None:
                    s = mean_slope(other)
                    return None if s is None else c * s
            return None
        c = _const(node.right)
        if c:
            s = mean_slope(node.left)
            return None if s is None else s / c
        return None
    if isinstance(node, Call):
        lin = _linear(node.args[0]) if node.name != "pow" else None
        if lin is None or lin[0] == 0.0:
            return None
        if node.name in ("sin", "cos"):
            return 0.0
        if node.name == "exp" and lin[0] < 0:
            return 0.0
    return None


# --------------------------------------------------------------------------
# Quadrature
# --------------------------------------------------------------------------

def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = QUAD_TOL,
                     max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction (absolute tolerance)."""
    if a == b:
        return 0.0

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = simpson(fa, fm, fb, b - a)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a_, b_, fa_, fm_, fb_, whole_, tol_, depth = stack.pop()
        m_ = 0.5 * (a_ + b_)
        lm, rm = 0.5 * (a_ + m_), 0.5 * (m_ + b_)
        flm, frm = f(lm), f(rm)
        left = simpson(fa_, flm, fm_, m_ - a_)
        right = simpson(fm_, frm, fb_, b_ - m_)
        delta = left + right - whole_
        if depth >= max_depth:
            raise RateEvaluationError(f"quadrature did not converge on [{a_}, {b_}]")
        if abs(delta) <= 15.0 * tol_:
            total += left + right + delta / 15.0
        else:
            stack.append((a_, m_, fa_, flm, fm_, left, 0.5 * tol_, depth + 1))
            stack.append((m_, b_, fm_, frm, fb_, right, 0.5 * tol_, depth + 1))
    if not math.isfinite(total):
        raise RateEvaluationError(f"non-finite integral on [{a}, {b}]")
    return total


def paneled_integral(f: Callable[[float], float], a: float, b: float, tol: float = QUAD_TOL) -> float:
    if b < a:
        return -paneled_integral(f, b, a, tol)
    n = max(1, int(math.ceil((b - a) / QUAD_PANEL)))
    edges = np.linspace(a, b, n + 1)
    return sum(adaptive_simpson(f, float(lo), float(hi), tol / n) for lo, hi in zip(edges[:-1], edges[1:]))


# --------------------------------------------------------------------------
# Rate functions
# --------------------------------------------------------------------------

class RateFunction:
    """A scalar, real rate f(t) with integral ``F(t) = int_0^t f``."""

    #: True when ``integral`` is evaluated from a closed-form antiderivative.
    closed_form: bool = False

    def __call__(self, t: float) -> float:
        raise NotImplementedError

    def integral(self, t: float) -> float:
        """Integral of the rate over ``[0, t]``."""
        raise NotImplementedError

    def integrals(self, times: Sequence[float]) -> np.ndarray:
        """Integrals over ``[0, t]`` for each time, sharing work between neighbours."""
        times = np.asarray(times, dtype=float)
        return np.array([self.integral(float(t)) for t in times])

    @property
    def asymptotic_slope(self) -> float | None:
        """``s`` with ``F(t) - s*t`` bounded for t >= 0, when provable; else ``None``."""
        return None

    @property
    def is_zero(self) -> bool:
        """Identically zero (decided structurally, never by sampling)."""
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _finite(value, t) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise RateEvaluationError(f"rate is not finite at t={t}")
    return v


@dataclass(frozen=True)
class ConstantRate(RateFunction):
    value: float
    closed_form = True

    def __call__(self, t):
        return float(self.value)

    def integral(self, t):
        return float(self.value) * t

    def integrals(self, times):
        return float(self.value) * np.asarray(times, dtype=float)

    @property
    def asymptotic_slope(self):
        return float(self.value)

    @property
    def is_zero(self):
        return self.value == 0.0

    def to_dict(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class ExpressionRate(RateFunction):
    """Rate given by expression text; exact integral when an antiderivative is found."""

    expr: str
    tree: Node = field(compare=False, repr=False, default=None)
    _anti: Node | None = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.tree is None:
            object.__setattr__(self, "tree", parse_expression(self.expr))
        object.__setattr__(self, "_anti", antiderivative(self.tree))

    @property
    def closed_form(self) -> bool:  # type: ignore[override]
        return self._anti is not None

    def __call__(self, t):
        try:
            with np.errstate(all="raise"):
                return _finite(evaluate(self.tree, float(t)), t)
        except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
            raise RateEvaluationError(f"cannot evaluate {self.expr!r} at t={t}: {exc}") from exc

    def integral(self, t):
        if self._anti is not None:
            with np.errstate(all="raise"):
                return _finite(evaluate(self._anti, float(t)) - evaluate(self._anti, 0.0), t)
        return paneled_integral(self, 0.0, float(t))

    def integrals(self, times):
        times = np.asarray(times, dtype=float)
        if self._anti is not None:
            return np.array([self.integral(t) for t in times])
        order = np.argsort(times)
        out = np.empty_like(times)
        acc, prev = 0.0, 0.0
        for idx in order:
            t = float(times[idx])
            acc += paneled_integral(self, prev, t)
            prev = t
            out[idx] = acc
        return out

    @property
    def asymptotic_slope(self):
        return mean_slope(self.tree)

    def to_dict(self):
        return {"kind": "expr", "expr": self.expr}


@dataclass(frozen=True)
class ExponentialRate(RateFunction):
    """``amplitude * exp(-decay * t)``."""

    amplitude: float = 1.0
    decay: float = 1.0
    closed_form = True

    def __call__(self, t):
        return self.amplitude * math.exp(-self.decay * t)

    def integral(self, t):
        if self.decay == 0:
            return self.amplitude * t
        return self.amplitude * -math.expm1(-self.decay * t) / self.decay

    @property
    def asymptotic_slope(self):
        if self.decay > 0:
            return 0.0
        return self.amplitude if self.decay == 0 else None

    @property
    def is_zero(self):
        return self.amplitude == 0.0

    def to_dict(self):
        return {"kind": "preset", "name": "exponential",
                "params": {"amplitude": self.amplitude, "decay": self.decay}}


@dataclass(frozen=True)
class SinusoidalRate(RateFunction):
    """``offset + amplitude * sin(frequency * t + phase)``."""

    offset: float = 0.0
    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0
    closed_form = True

    def __call__(self, t):
        return self.offset + self.amplitude * math.sin(self.frequency * t + self.phase)

    def integral(self, t):
        if self.frequency == 0:
            return (self.offset + self.amplitude * math.sin(self.phase)) * t
        osc = (math.cos(self.phase) - math.cos(self.frequency * t + self.phase)) / self.frequency
        return self.offset * t + self.amplitude * osc

    @property
    def asymptotic_slope(self):
        if self.frequency == 0:
            return self.offset + self.amplitude * math.sin(self.phase)
        return self.offset

    @property
    def is_zero(self):
        return self.offset == 0.0 and self.amplitude == 0.0

    def to_dict(self):
        return {"kind": "preset", "name": "sinusoidal",
                "params": {"offset": self.offset, "amplitude": self.amplitude,
                           "frequency": self.frequency, "phase": self.phase}}


@dataclass(frozen=True)
class LinearCombinationRate(RateFunction):
    """``sum_k coeff_k * rate_k``."""

    terms: tuple[tuple[float, RateFunction], ...]

    @property
    def closed_form(self) -> bool:  # type: ignore[override]
        return all(r.closed_form for _, r in self.terms)

    def __call__(self, t):
        return sum(c * r(t) for c, r in self.terms)

    def integral(self, t):
        return sum(c * r.integral(t) for c, r in self.terms)

    def integrals(self, times):
        out = np.zeros(len(times))
        for c, r in self.terms:
            out += c * r.integrals(times)
        return out

    @property
    def asymptotic_slope(self):
        slopes = [r.asymptotic_slope for _, r in self.terms]
        if any(s is None for s in slopes):
            return None
        return sum(c * s for (c, _), s in zip(self.terms, slopes))

    @property
    def is_zero(self):
        return all(c == 0.0 or r.is_zero for c, r in self.terms)

    def to_dict(self):
        return {"kind": "preset", "name": "linear_combination",
                "params": {"terms": [{"coeff": c, "rate": r.to_dict()} for c, r in self.terms]}}


PRESET_RATES = {
    "exponential": (ExponentialRate, {"amplitude", "decay"}),
    "sinusoidal": (SinusoidalRate, {"offset", "amplitude", "frequency", "phase"}),
}


def rate_from_dict(doc: dict) -> RateFunction:
    """Build a rate from its JSON descriptor."""
    kind = doc.get("kind")
    if kind == "constant":
        return ConstantRate(float(doc["value"]))
    if kind == "expr":
        return ExpressionRate(doc["expr"])
    if kind == "preset":
        name = doc.get("name")
        params = doc.get("params", {}) or {}
        if name == "linear_combination":
            return LinearCombinationRate(tuple(
                (float(term["coeff"]), rate_from_dict(term["rate"])) for term in params["terms"]))
        if name not in PRESET_RATES:
            raise ValueError(f"unknown rate preset {name!r}; known: "
                             f"{sorted(PRESET_RATES) + ['linear_combination']}")
        cls, allowed = PRESET_RATES[name]
        extra = set(params) - allowed
        if extra:
            raise ValueError(f"unknown parameter(s) {sorted(extra)} for rate preset {name!r}")
        return cls(**{k: float(v) for k, v in params.items()})
    raise ValueError(f"unknown rate kind {kind!r}")


def parse_rate_expression(text: str) -> RateFunction:
    """Parse expression text into a rate; t-independent expressions become constants."""
    tree = parse_expression(text)
    if not depends_on_t(tree):
        value = _const(tree)
        if value is None:
            raise RateEvaluationError(f"constant expression {text!r} is not finite")
        return ConstantRate(value)
    return ExpressionRate(text, tree)


def as_rate(value: RateFunction | float | int | str | dict) -> RateFunction:
    """Coerce numbers, expression text and JSON descriptors into a rate."""
    if isinstance(value, RateFunction):
        return value
    if isinstance(value, (int, float)):
        return ConstantRate(float(value))
    if isinstance(value, dict):
        return rate_from_dict(value)
    return parse_rate_expression(str(value))


def combine(coeffs: Sequence[float], rates: Sequence[RateFunction]) -> RateFunction:
    """Linear combination, collapsed to a constant or single rate where possible."""
    merged: dict[str, list] = {}
    for c, r in zip(coeffs, rates):
        if r.is_zero:
            continue
        if isinstance(r, LinearCombinationRate):
            inner = [(float(c) * ci, ri) for ci, ri in r.terms]
        else:
            inner = [(float(c), r)]
        for ci, ri in inner:
            entry = merged.setdefault(ri.key(), [0.0, ri])
            entry[0] += ci
    terms = [(c, r) for c, r in merged.values() if c != 0.0]
    const = sum(c * r.value for c, r in terms if isinstance(r, ConstantRate))
    rest = [(c, r) for c, r in terms if not isinstance(r, ConstantRate)]
    if not rest:
        return ConstantRate(const)
    if const != 0.0:
        rest.insert(0, (1.0, ConstantRate(const)))
    if len(rest) == 1 and rest[0][0] == 1.0:
        return rest[0][1]
    return LinearCombinationRate(tuple(rest))
