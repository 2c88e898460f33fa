"""Small math expression language with a forward-mode AD evaluator.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Lagrangians, constraints and observables are all written in this language.
Derivatives come from :class:`Jet`, a truncated second-order Taylor number
carrying a gradient and (optionally) a Hessian block over the requested
variables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Num", "Const", "Var", "Neg", "BinOp", "Call",
    "ExprError", "ExprSyntaxError", "UnknownFunctionError",
    "UnboundVariableError", "DomainError",
    "Jet", "parse", "to_source", "free_vars", "evaluate", "eval_derivs",
    "FUNCTIONS", "CONSTANTS",
]


class ExprError(Exception):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, offset: int, expected: Iterable[str], source: str = ""):
        self.offset = offset
        self.expected = frozenset(expected)
        self.source = source
        exp = ", ".join(sorted(self.expected))
        super().__init__(f"syntax error at offset {offset}: expected one of {{{exp}}}")


class UnknownFunctionError(ExprError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function {name!r} at offset {offset}")


class UnboundVariableError(ExprError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable {name!r}")

    def __str__(self) -> str:
        return self.args[0]


class DomainError(ExprError, ValueError):
    def __init__(self, message: str, node: "Expr"):
        self.node = node
        super().__init__(f"{message} in {to_source(node)!r}")


# ---------------------------------------------------------------------------
# AST

class Expr:
    """Base class of the immutable expression tree."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Const(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Call(Expr):
    func: str
    arg: Expr


CONSTANTS = {"pi": math.pi}


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

_ATOM_START = frozenset({"number", "identifier", "'('"})


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # 'number', 'ident', an operator character, or 'eof'
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(byte_pos, {"number", "identifier", "operator"}, source)
        text = m.group()
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(text if kind == "op" else kind, text, byte_pos))
        pos = m.end()
        byte_pos += len(text.encode("utf-8"))
    tokens.append(_Token("eof", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: Iterable[str]):
        raise ExprSyntaxError(self.peek().offset, expected, self.source)

    def expect(self, kind: str) -> _Token:
        if self.peek().kind != kind:
            self.fail({f"'{kind}'"})
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek().kind != "eof":
            self.fail({"'+'", "'-'", "'*'", "'/'", "'^'", "end of input"})
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        if self.peek().kind == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().kind == "^":
            self.advance()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownFunctionError(tok.text, tok.offset)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            if tok.text in CONSTANTS:
                return Const(tok.text)
            return Var(tok.text)
        if tok.kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(_ATOM_START | {"'-'"})


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree.

    Raises :class:`ExprSyntaxError` (with byte offset and the expected-token
    set) or :class:`UnknownFunctionError`.
    """
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printer

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL}.get(
            node.op, _PREC_POW)
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _PREC_NEG
    return _PREC_ATOM


def _wrap(node: Expr, min_prec: int) -> str:
    text = to_source(node)
    return f"({text})" if _prec(node) < min_prec else text


def to_source(node: Expr) -> str:
    """Print an expression so that ``parse(to_source(e)) == e``."""
    if isinstance(node, Num):
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            # unreachable from the parser; keeps printing total
            return f"-{-node.value!r}"
        v = node.value
        return str(int(v)) if v.is_integer() and v < 1e15 else repr(v)
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _PREC_NEG)
    if isinstance(node, BinOp):
        if node.op == "^":
            return f"{_wrap(node.left, _PREC_ATOM)}^{_wrap(node.right, _PREC_NEG)}"
        p = _prec(node)
        return f"{_wrap(node.left, p)} {node.op} {_wrap(node.right, p + 1)}"
    raise TypeError(f"not an expression node: {node!r}")


def free_vars(node: Expr) -> frozenset[str]:
    """Names of all variables appearing in the tree."""
    out: set[str] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Neg):
            stack.append(n.operand)
        elif isinstance(n, BinOp):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.append(n.arg)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Second-order forward-mode numbers

class Jet:
    """Value with gradient and optional Hessian over a fixed variable list.

    Equivalent to a nested dual number (dual of dual) with vector-valued
    tangents; ``hess`` is ``None`` for first-order evaluation.
    """

    __slots__ = ("val", "grad", "hess")

    def __init__(self, val: float, grad: np.ndarray, hess: np.ndarray | None = None):
        self.val = val
        self.grad = grad
        self.hess = hess

    def __repr__(self) -> str:
        return f"Jet({self.val!r}, {self.grad!r}, {self.hess!r})"

    @classmethod
    def variable(cls, val: float, index: int, size: int, order: int) -> "Jet":
        grad = np.zeros(size)
        grad[index] = 1.0
        hess = np.zeros((size, size)) if order == 2 else None
        return cls(float(val), grad, hess)

    def _lift(self, c: float) -> "Jet":
        return Jet(c, np.zeros_like(self.grad),
                   None if self.hess is None else np.zeros_like(self.hess))

    def chain(self, f0: float, f1: float, f2: float) -> "Jet":
        """Apply a scalar function with derivatives (f0, f1, f2) at self.val."""
        hess = None
        if self.hess is not None:
            hess = f1 * self.hess
            if f2 != 0.0:
                hess = hess + f2 * np.outer(self.grad, self.grad)
        return Jet(f0, f1 * self.grad, hess)

    def __neg__(self) -> "Jet":
        return Jet(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __add__(self, other):
        if isinstance(other, Jet):
            hess = None if self.hess is None else self.hess + other.hess
            return Jet(self.val + other.val, self.grad + other.grad, hess)
        return Jet(self.val + other, self.grad, self.hess)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            hess = None if self.hess is None else self.hess - other.hess
            return Jet(self.val - other.val, self.grad - other.grad, hess)
        return Jet(self.val - other, self.grad, self.hess)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self, other
            hess = None
            if a.hess is not None:
                cross = np.outer(a.grad, b.grad)
                hess = a.val * b.hess + b.val * a.hess + cross + cross.T
            return Jet(a.val * b.val, a.val * b.grad + b.val * a.grad, hess)
        return Jet(self.val * other, self.grad * other,
                   None if self.hess is None else self.hess * other)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        v = self.val
        return self.chain(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            out = self * other.reciprocal()
            out.val = self.val / other.val  # keep the value bit-identical to float division
            return out
        return Jet(self.val / other, self.grad / other,
                   None if self.hess is None else self.hess / other)

    def __rtruediv__(self, other):
        out = self.reciprocal() * other
        out.val = other / self.val
        return out

    def is_constant(self) -> bool:
        return not self.grad.any() and (self.hess is None or not self.hess.any())


# ---------------------------------------------------------------------------
# Evaluation

def _value(x) -> float:
    return x.val if isinstance(x, Jet) else x


def _sqrt(x, node):
    v = _value(x)
    if v < 0:
        raise DomainError("sqrt of negative number", node)
    if not isinstance(x, Jet):
        return math.sqrt(v)
    if v == 0:
        raise DomainError("sqrt not differentiable at 0", node)
    r = math.sqrt(v)
    return x.chain(r, 0.5 / r, -0.25 / (r * v))


def _log(x, node):
    v = _value(x)
    if v <= 0:
        raise DomainError("log of non-positive number", node)
    if not isinstance(x, Jet):
        return math.log(v)
    return x.chain(math.log(v), 1.0 / v, -1.0 / v**2)


def _exp(x, node):
    v = _value(x)
    try:
        e = math.exp(v)
    except OverflowError:
        raise DomainError("exp overflow", node) from None
    return x.chain(e, e, e) if isinstance(x, Jet) else e


def _sin(x, node):
    v = _value(x)
    s = math.sin(v)
    return x.chain(s, math.cos(v), -s) if isinstance(x, Jet) else s


def _cos(x, node):
    v = _value(x)
    c = math.cos(v)
    return x.chain(c, -math.sin(v), -c) if isinstance(x, Jet) else c


def _tan(x, node):
    v = _value(x)
    c = math.cos(v)
    if c == 0.0:
        raise DomainError("tan pole", node)
    t = math.tan(v)
    if not isinstance(x, Jet):
        return t
    sec2 = 1.0 + t * t
    return x.chain(t, sec2, 2.0 * t * sec2)


def _abs(x, node):
    v = _value(x)
    if not isinstance(x, Jet):
        return abs(v)
    return x.chain(abs(v), math.copysign(1.0, v) if v != 0 else 0.0, 0.0)


FUNCTIONS: dict[str, Callable] = {
    "sin": _sin, "cos": _cos, "tan": _tan, "sqrt": _sqrt,
    "exp": _exp, "log": _log, "abs": _abs,
}


def _div(a, b, node):
    if _value(b) == 0.0:
        raise DomainError("division by zero", node)
    return a / b


def _pow(a, b, node):
    av = _value(a)
    b_const = not isinstance(b, Jet) or b.is_constant()
    if b_const:
        c = _value(b)
        is_int = float(c).is_integer()
        if av < 0 and not is_int:
            raise DomainError("non-integer power of negative base", node)
        if av == 0 and c < 0:
            raise DomainError("negative power of zero", node)
        if not isinstance(a, Jet):
            return _float_pow(av, c, is_int, node)
        f0 = _float_pow(av, c, is_int, node)
        f1 = 0.0 if c == 0 else c * _float_pow(av, c - 1, is_int, node)
        f2 = 0.0 if c in (0.0, 1.0) else c * (c - 1) * _float_pow(av, c - 2, is_int, node)
        return a.chain(f0, f1, f2)
    # variable exponent: a^b = exp(b log a)
    if av <= 0:
        raise DomainError("variable exponent requires positive base", node)
    return _exp(b * _log(a, node), node)


def _float_pow(a: float, c: float, is_int: bool, node) -> float:
    if a == 0 and c < 0:
        raise DomainError("negative power of zero", node)
    try:
        return a ** int(c) if is_int and abs(c) < 2**31 else a ** c
    except OverflowError:
        raise DomainError("power overflow", node) from None


_EvalFn = Callable[[Mapping], object]


def _compile(node: Expr) -> _EvalFn:
    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Const):
        v = CONSTANTS[node.name]
        return lambda env: v
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(name) from None
        return var
    if isinstance(node, Neg):
        f = _compile(node.operand)
        return lambda env: -f(env)
    if isinstance(node, Call):
        g = FUNCTIONS[node.func]
        f = _compile(node.arg)
        return lambda env: g(f(env), node)
    if isinstance(node, BinOp):
        left, right = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda env: left(env) + right(env)
        if op == "-":
            return lambda env: left(env) - right(env)
        if op == "*":
            return lambda env: left(env) * right(env)
        if op == "/":
            return lambda env: _div(left(env), right(env), node)
        if op == "^":
            return lambda env: _pow(left(env), right(env), node)
    raise TypeError(f"not an expression node: {node!r}")


_compiled: dict[Expr, _EvalFn] = {}


def compiled(node: Expr) -> _EvalFn:
    """Closure evaluating ``node`` over floats or :class:`Jet` values."""
    fn = _compiled.get(node)
    if fn is None:
        fn = _compiled[node] = _compile(node)
    return fn


def evaluate(node: Expr, env: Mapping[str, float]) -> float:
    """Evaluate in IEEE double precision."""
    out = compiled(node)(env)
    return float(out)


def eval_derivs(node: Expr, env: Mapping[str, float], wrt: Sequence[str],
                order: int = 1) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Value, gradient and (for ``order=2``) Hessian with respect to ``wrt``.

    Variables in ``wrt`` must be bound in ``env``; unlisted variables are
    treated as constants.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    k = len(wrt)
    jenv = dict(env)
    for i, name in enumerate(wrt):
        if name not in env:
            raise UnboundVariableError(name)
        jenv[name] = Jet.variable(env[name], i, k, order)
    out = compiled(node)(jenv)
    if isinstance(out, Jet):
        return float(out.val), out.grad, out.hess
    return float(out), np.zeros(k), (np.zeros((k, k)) if order == 2 else None)
