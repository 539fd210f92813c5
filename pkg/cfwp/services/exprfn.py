"""Warping-profile expression language.

Profiles are written as plain infix text over the variable ``t``, named
parameters and the functions ``sqrt``, ``exp`` and ``log``.  Trees are
immutable dataclasses so they can be shared with worker processes.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so
``-t^2`` is ``-(t^2)`` and ``2^-t`` is ``2^(-t)``.
"""

import logging
import math
import re
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from ..errors import DomainError, ExprSyntaxError, InvalidInput, InvalidParams, ToleranceNotMet, UnknownIdentifier

logger = logging.getLogger(__name__)

FUNCTIONS = ("sqrt", "exp", "log")
RESERVED = frozenset(FUNCTIONS) | {"t"}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def _is_array(x) -> bool:
    return isinstance(x, np.ndarray)


def _any(cond) -> bool:
    return bool(np.any(cond)) if _is_array(cond) else bool(cond)


# 表达式节点
@dataclass(frozen=True)
class Node:
    def eval(self, t, env: Mapping[str, float]):
        raise NotImplementedError

    def serialize(self) -> str:
        raise NotImplementedError

    def derivative(self) -> "Node":
        raise NotImplementedError

    def has_t(self) -> bool:
        return False

    def params(self) -> frozenset:
        return frozenset()

    def __str__(self) -> str:
        return self.serialize()


@dataclass(frozen=True)
class Const(Node):
    value: float

    def eval(self, t, env):
        return self.value

    def serialize(self) -> str:
        text = repr(float(self.value))
        return f"({text})" if math.copysign(1.0, self.value) < 0 else text

    def derivative(self) -> Node:
        return ZERO


@dataclass(frozen=True)
class Var(Node):
    def eval(self, t, env):
        return t

    def serialize(self) -> str:
        return "t"

    def derivative(self) -> Node:
        return ONE

    def has_t(self) -> bool:
        return True


@dataclass(frozen=True)
class Param(Node):
    name: str

    def eval(self, t, env):
        return env[self.name]

    def serialize(self) -> str:
        return self.name

    def derivative(self) -> Node:
        return ZERO

    def params(self) -> frozenset:
        return frozenset((self.name,))


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def eval(self, t, env):
        return -self.arg.eval(t, env)

    def serialize(self) -> str:
        return f"(-{self.arg.serialize()})"

    def derivative(self) -> Node:
        return neg(self.arg.derivative())

    def has_t(self) -> bool:
        return self.arg.has_t()

    def params(self) -> frozenset:
        return self.arg.params()


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def eval(self, t, env):
        a = self.left.eval(t, env)
        b = self.right.eval(t, env)
        op = self.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if _any(b == 0):
                raise DomainError("division by zero", self.serialize())
            return a / b
        return _power(a, b, self)

    def serialize(self) -> str:
        return f"({self.left.serialize()} {self.op} {self.right.serialize()})"

    def derivative(self) -> Node:
        u, v = self.left, self.right
        op = self.op
        if op in "+-":
            du = u.derivative() if u.has_t() else ZERO
            dv = v.derivative() if v.has_t() else ZERO
            return add(du, dv) if op == "+" else sub(du, dv)
        if op == "*":
            terms = []
            if u.has_t():
                terms.append(mul(u.derivative(), v))
            if v.has_t():
                terms.append(mul(u, v.derivative()))
            return _sum(terms)
        if op == "/":
            if not v.has_t():
                return div(u.derivative(), v) if u.has_t() else ZERO
            numerator = neg(mul(u, v.derivative()))
            if u.has_t():
                numerator = sub(mul(u.derivative(), v), mul(u, v.derivative()))
            return div(numerator, power(v, Const(2.0)))
        # u ^ v
        if not self.has_t():
            return ZERO
        if not v.has_t():
            return mul(mul(v, power(u, sub(v, ONE))), u.derivative())
        if not u.has_t():
            return mul(mul(self, func("log", u)), v.derivative())
        inner = add(mul(v.derivative(), func("log", u)), div(mul(v, u.derivative()), u))
        return mul(self, inner)

    def has_t(self) -> bool:
        return self.left.has_t() or self.right.has_t()

    def params(self) -> frozenset:
        return self.left.params() | self.right.params()


@dataclass(frozen=True)
class Func(Node):
    name: str
    arg: Node

    def eval(self, t, env):
        x = self.arg.eval(t, env)
        return _apply_func(self.name, x, self)

    def serialize(self) -> str:
        return f"{self.name}({self.arg.serialize()})"

    def derivative(self) -> Node:
        if not self.arg.has_t():
            return ZERO
        du = self.arg.derivative()
        if self.name == "sqrt":
            return div(du, mul(Const(2.0), self))
        if self.name == "exp":
            return mul(self, du)
        return div(du, self.arg)

    def has_t(self) -> bool:
        return self.arg.has_t()

    def params(self) -> frozenset:
        return self.arg.params()


ZERO = Const(0.0)
ONE = Const(1.0)


def _power(a, b, node: Node):
    if _is_array(a) or _is_array(b):
        if _any((a == 0) & (b < 0)):
            raise DomainError("division by zero", node.serialize())
        if _any((a < 0) & (b != np.floor(b))):
            raise DomainError("negative base with non-integer exponent", node.serialize())
        with np.errstate(over="ignore"):
            return np.power(a, b)
    if a == 0 and b < 0:
        raise DomainError("division by zero", node.serialize())
    if a < 0 and b != math.floor(b):
        raise DomainError("negative base with non-integer exponent", node.serialize())
    try:
        return math.pow(a, b)
    except OverflowError:
        odd = a < 0 and b % 2 == 1
        return -math.inf if odd else math.inf


def _apply_func(name: str, x, node: Node):
    vec = _is_array(x)
    if name == "sqrt":
        if _any(x < 0):
            raise DomainError("sqrt of negative argument", node.serialize())
        return np.sqrt(x) if vec else math.sqrt(x)
    if name == "log":
        if _any(x <= 0):
            raise DomainError("log of non-positive argument", node.serialize())
        return np.log(x) if vec else math.log(x)
    if vec:
        with np.errstate(over="ignore"):
            return np.exp(x)
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


# 构造函数（只做常量折叠和 0/1 恒等）
def _fold(node: Node) -> Node:
    try:
        value = node.eval(1.0, {})
    except (DomainError, ValueError, ZeroDivisionError):
        return node
    if isinstance(value, float) and math.isfinite(value):
        return Const(value)
    return node


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    return Neg(a)


def add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(BinOp("+", a, b))
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(BinOp("-", a, b))
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(BinOp("*", a, b))
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(BinOp("/", a, b))
    if b == ONE:
        return a
    return BinOp("/", a, b)


def power(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(BinOp("^", a, b))
    if b == ONE:
        return a
    return BinOp("^", a, b)


def func(name: str, a: Node) -> Node:
    if isinstance(a, Const):
        return _fold(Func(name, a))
    return Func(name, a)


def _sum(terms: List[Node]) -> Node:
    if not terms:
        return ZERO
    result = terms[0]
    for term in terms[1:]:
        result = add(result, term)
    return result


_BINARY = {"+": add, "-": sub, "*": mul, "/": div}


# 解析
class _Parser:
    def __init__(self, text: str, param_names: Sequence[str]):
        self.text = text
        self.params = set(param_names)
        self.tokens = self._tokenize(text)
        self.index = 0

    @staticmethod
    def _tokenize(text: str) -> List[Tuple[str, str, int]]:
        tokens = []
        pos = 0
        while pos < len(text):
            ch = text[pos]
            if ch.isspace():
                pos += 1
                continue
            number = _NUMBER.match(text, pos)
            if number:
                tokens.append(("num", number.group(), pos))
                pos = number.end()
                continue
            ident = _IDENT.match(text, pos)
            if ident:
                tokens.append(("ident", ident.group(), pos))
                pos = ident.end()
                continue
            if ch in "+-*/^()":
                tokens.append((ch, ch, pos))
                pos += 1
                continue
            raise ExprSyntaxError(f"unexpected character {ch!r}", pos, ["number", "identifier", "operator"])
        tokens.append(("end", "", len(text)))
        return tokens

    def peek(self) -> Tuple[str, str, int]:
        return self.tokens[self.index]

    def advance(self) -> Tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, kind: str) -> Tuple[str, str, int]:
        token = self.peek()
        if token[0] != kind:
            self.fail([kind])
        return self.advance()

    def fail(self, expected: List[str]):
        kind, text, pos = self.peek()
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos, expected)

    def parse(self) -> Node:
        if self.peek()[0] == "end":
            self.fail(["expression"])
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(["operator", "end of input"])
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            node = _BINARY[op](node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            node = _BINARY[op](node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "-":
            self.advance()
            return neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek()[0] == "^":
            self.advance()
            return power(base, self.unary())
        return base

    def primary(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "num":
            self.advance()
            value = float(text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"literal {text} is out of range", pos, ["finite number"])
            return Const(value)
        if kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            self.advance()
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(text, arg)
            if text == "t":
                return Var()
            if text in self.params:
                return Param(text)
            raise UnknownIdentifier(text, pos)
        self.fail(["number", "identifier", "'('"])


@dataclass(frozen=True)
class WarpExpr:
    """带参数名表的剖面表达式"""

    root: Node
    param_names: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "param_names", tuple(self.param_names))
        for name in self.param_names:
            _check_param_name(name)
        missing = self.root.params() - set(self.param_names)
        if missing:
            raise UnknownIdentifier(sorted(missing)[0])

    def serialize(self) -> str:
        return self.root.serialize()

    def used_params(self) -> frozenset:
        return self.root.params()

    def has_t(self) -> bool:
        return self.root.has_t()

    def __str__(self) -> str:
        return self.serialize()


def _check_param_name(name: str) -> None:
    if not _IDENT.fullmatch(name or ""):
        raise InvalidInput(f"invalid parameter name {name!r}")
    if name in RESERVED:
        raise InvalidInput(f"parameter name {name!r} is reserved")


def parse(text: str, param_names: Iterable[str] = ()) -> WarpExpr:
    """解析剖面表达式"""
    names = tuple(param_names)
    for name in names:
        _check_param_name(name)
    if text is None or not text.strip():
        raise ExprSyntaxError("empty expression", 0, ["expression"])
    return WarpExpr(_Parser(text, names).parse(), names)


def check_binding(expr: WarpExpr, binding: Mapping[str, float]) -> dict:
    env = {}
    for name in sorted(expr.used_params()):
        if name not in binding:
            raise InvalidParams(f"parameter '{name}' is not bound", name=name)
        value = float(binding[name])
        if not math.isfinite(value):
            raise InvalidParams(f"parameter '{name}' must be finite", name=name)
        env[name] = value
    return env


def evaluate(expr: WarpExpr, t, binding: Optional[Mapping[str, float]] = None):
    """在 t 处求值，t 可以是标量或 numpy 数组"""
    env = check_binding(expr, binding or {})
    return broadcast_like(expr.root.eval(t, env), t)


def broadcast_like(value, t):
    if _is_array(t) and np.ndim(value) == 0:
        return np.full(np.shape(t), float(value))
    return value


def differentiate(expr: WarpExpr) -> WarpExpr:
    return WarpExpr(expr.root.derivative(), expr.param_names)


# 求积
@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    converged: bool
    message: str = ""

    def raise_if_failed(self) -> "QuadResult":
        if not self.converged:
            raise ToleranceNotMet(self.message or "quadrature tolerance not met",
                                  value=self.value, error=self.error)
        return self


def integrate_adaptive(f: Callable[[float], float], x0: float, x1: float,
                       rel_tol: float = 1e-10, limit: int = 200) -> QuadResult:
    """自适应求积；端点奇异性由区间细分处理，未收敛时返回最佳估计和标记"""
    if not x0 < x1:
        raise InvalidInput(f"integration bounds must satisfy x0 < x1, got [{x0}, {x1}]")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IntegrationWarning)
        value, error = quad(f, x0, x1, epsabs=0.0, epsrel=rel_tol, limit=limit)
    problems = [str(w.message) for w in caught if issubclass(w.category, IntegrationWarning)]
    converged = not problems and math.isfinite(value)
    if not converged:
        logger.debug("quad on [%g, %g] did not converge: %s", x0, x1, "; ".join(problems))
    return QuadResult(float(value), float(error), converged, "; ".join(problems))


def cumulative_integral(f: Callable[[float], float], nodes: Sequence[float],
                        rel_tol: float = 1e-10) -> Tuple[np.ndarray, bool]:
    """逐段自适应求积的累积值，首项为 0"""
    nodes = np.asarray(nodes, dtype=float)
    values = np.zeros(len(nodes))
    converged = True
    for i in range(1, len(nodes)):
        piece = integrate_adaptive(f, nodes[i - 1], nodes[i], rel_tol)
        converged = converged and piece.converged
        values[i] = values[i - 1] + piece.value
    return values, converged


def gauss_legendre_cumulative(f_vec: Callable[[np.ndarray], np.ndarray], nodes: np.ndarray,
                              order: int = 8) -> np.ndarray:
    """复合 Gauss-Legendre 累积积分，f_vec 需支持数组输入"""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = nodes[:-1], nodes[1:]
    half = 0.5 * (b - a)
    points = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    pieces = half * (np.asarray(f_vec(points), dtype=float) @ w)
    return np.concatenate(([0.0], np.cumsum(pieces)))
