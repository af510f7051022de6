"""
Drift expressions: tokenizer, recursive-descent parser and evaluator.

Grammar (lowest to highest precedence): + -, * /, unary -, ^ (right-associative, constant
non-negative integer exponent), calls abs/sin/cos/exp/min/max, numbers, x1..xd, t.
Evaluation accepts scalars or numpy arrays for the state components.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

log = logging.getLogger(__name__)


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, position: int, expected: str, found: str):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(f"position {position}: expected {expected}, found {found}")


class ExprArityError(ExprError):
    pass


class ExprDimensionError(ExprError):
    pass


class ExprEvalError(ExprError):
    pass


UNARY_FUNCTIONS = {"abs": np.abs, "sin": np.sin, "cos": np.cos, "exp": np.exp}
NARY_FUNCTIONS = {"min": np.minimum, "max": np.maximum}


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    """State component x<index> (1-based), or time when index is 0."""

    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a name from UNARY_FUNCTIONS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Nary:
    op: str  # min or max
    args: tuple["Expr", ...]


Expr = Union[Const, Var, Unary, Binary, Nary]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    position: int  # 1-based


def tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            col = pos + len(source[pos:]) - len(source[pos:].lstrip()) + 1
            raise ExprSyntaxError(col, "a number, name or operator", repr(source[col - 1]))
        kind = m.lastgroup or "op"
        tokens.append(_Token(kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    tokens.append(_Token("end", "", len(source) + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, dim: int):
        self.tokens = tokenize(source)
        self.i = 0
        self.dim = dim

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _fail(self, expected: str) -> ExprSyntaxError:
        found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
        return ExprSyntaxError(self.tok.position, expected, found)

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def _expect(self, text: str) -> None:
        if not self._accept(text):
            raise self._fail(repr(text))

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise self._fail("operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self._accept("-"):
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            caret = self.tok
            self.i += 1
            exponent = self.unary()
            value = None
            if not free_variables(exponent):
                try:
                    value = evaluate(exponent, (), 0.0)
                except ExprError:
                    pass
            if value is None or not float(value).is_integer() or value < 0:
                raise ExprSyntaxError(caret.position + 1, "a constant non-negative integer exponent", to_source(exponent))
            return Binary("^", base, Const(float(value)))
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            if tok.text in UNARY_FUNCTIONS or tok.text in NARY_FUNCTIONS:
                return self.call(tok)
            return self.variable(tok)
        if self._accept("("):
            node = self.expr()
            self._expect(")")
            return node
        raise self._fail("a number, variable, function call or '('")

    def call(self, name: _Token) -> Expr:
        self._expect("(")
        args = [self.expr()]
        while self._accept(","):
            args.append(self.expr())
        self._expect(")")
        if name.text in UNARY_FUNCTIONS:
            if len(args) != 1:
                raise ExprArityError(f"position {name.position}: {name.text} takes 1 argument, got {len(args)}")
            return Unary(name.text, args[0])
        if len(args) < 2:
            raise ExprArityError(f"position {name.position}: {name.text} takes at least 2 arguments, got {len(args)}")
        return Nary(name.text, tuple(args))

    def variable(self, tok: _Token) -> Expr:
        if tok.text == "t":
            return Var(0)
        m = re.fullmatch(r"x([1-9]\d*)", tok.text)
        if m is None:
            raise ExprSyntaxError(tok.position, "a variable x1..xd, t or a known function", repr(tok.text))
        k = int(m.group(1))
        if k > self.dim:
            raise ExprDimensionError(f"position {tok.position}: {tok.text} exceeds dimension {self.dim}")
        return Var(k)


def parse(source: str, dim: int) -> Expr:
    """Parse one drift component over variables x1..x<dim> and t."""
    if dim < 1:
        raise ExprDimensionError("dimension must be >= 1")
    return _Parser(source, dim).parse()


Value = Union[float, np.ndarray]


def _eval(node: Expr, x: Sequence[Value], t: Value) -> Value:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        if node.index == 0:
            return t
        if node.index > len(x):
            raise ExprDimensionError(f"x{node.index} exceeds dimension {len(x)}")
        return x[node.index - 1]
    if isinstance(node, Unary):
        arg = _eval(node.arg, x, t)
        if node.op == "neg":
            return -arg
        return UNARY_FUNCTIONS[node.op](arg)
    if isinstance(node, Nary):
        values = [_eval(a, x, t) for a in node.args]
        out = values[0]
        for v in values[1:]:
            out = NARY_FUNCTIONS[node.op](out, v)
        return out
    left = _eval(node.left, x, t)
    if node.op == "^":
        out = np.ones_like(left, dtype=float) if isinstance(left, np.ndarray) else 1.0
        for _ in range(int(node.right.value)):  # type: ignore[union-attr]
            out = out * left
        return out
    right = _eval(node.right, x, t)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if np.any(np.asarray(right) == 0):
        raise ExprEvalError(f"division by zero in {to_source(node)}")
    return left / right


def evaluate(node: Expr, x: Sequence[Value], t: Value = 0.0) -> Value:
    """Value of node at (x, t); arrays broadcast. Raises ExprEvalError on non-finite results."""
    with np.errstate(over="ignore", invalid="ignore"):
        value = _eval(node, x, t)
    if not np.all(np.isfinite(value)):
        raise ExprEvalError(f"non-finite value of {to_source(node)}")
    if isinstance(value, np.ndarray) and value.ndim == 0:
        return float(value)
    return value


_INFIX_SYMBOL = {"+": "+", "-": "-", "*": "*", "/": "/", "^": "^"}


def to_source(node: Expr) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(node, Const):
        v = node.value
        text = repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)
        return text if v >= 0 else f"({text})"
    if isinstance(node, Var):
        return "t" if node.index == 0 else f"x{node.index}"
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_source(node.arg)})"
        return f"{node.op}({to_source(node.arg)})"
    if isinstance(node, Nary):
        return f"{node.op}({', '.join(to_source(a) for a in node.args)})"
    return f"({to_source(node.left)} {_INFIX_SYMBOL[node.op]} {to_source(node.right)})"


def free_variables(node: Expr) -> set[int]:
    """Indices of the variables node reads (0 is t)."""
    if isinstance(node, Const):
        return set()
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Unary):
        return free_variables(node.arg)
    if isinstance(node, Nary):
        return set().union(*(free_variables(a) for a in node.args))
    return free_variables(node.left) | free_variables(node.right)
