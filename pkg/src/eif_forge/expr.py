"""Arithmetic expression mini-language used by pointwise, scalar and constant nodes.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | NAME | '$' INT | ('exp' | 'log') '(' expr ')' | '(' expr ')'

``$3`` refers to the output of node 3, a bare name refers to a data column.
``-x^2`` parses as ``-(x^2)`` and ``a^b^c`` as ``a^(b^c)``.  A unary minus
applied directly to a numeric literal folds into a negative literal.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Num", "Col", "Ref", "BinOp", "Neg", "Call", "Expr",
    "ExprSyntaxError", "DomainError",
    "parse_expr", "unparse", "evaluate", "diff", "columns_of", "refs_of",
]

FUNCTIONS = ("exp", "log")


class ExprSyntaxError(ValueError):
    """Tokenization or parse failure; ``pos`` is the 0-based character offset."""

    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos} in {text!r}")
        self.text = text
        self.pos = pos


class DomainError(ArithmeticError):
    """Division by zero or log of a non-positive value during evaluation."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Ref:
    node: int


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Call:
    func: str  # exp | log
    arg: "Expr"


Expr = Union[Num, Col, Ref, BinOp, Neg, Call]

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ref>\$\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        value = m.group(kind)
        if kind == "op" and value == "**":
            value = "^"
        tokens.append((kind, value, start))
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

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok, what="unexpected token"):
        shown = tok[1] if tok[0] != "end" else "end of input"
        raise ExprSyntaxError(f"{what} {shown!r}", self.text, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            self.fail(tok, f"expected {value!r}, got")
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail(tok)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value)
            return Neg(operand)
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Num(float(value))
        if kind == "ref":
            return Ref(int(value[1:]))
        if kind == "name":
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            return Col(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail(tok)


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    >>> parse_expr("(Y - $5)^2")
    BinOp(op='^', left=BinOp(op='-', left=Col(name='Y'), right=Ref(node=5)), right=Num(value=2.0))
    """
    if not isinstance(text, str):
        raise TypeError("expression must be a string")
    return _Parser(text).parse()


def unparse(node: Expr) -> str:
    """Fully parenthesized text that parses back to an identical tree."""
    if isinstance(node, Num):
        if not math.isfinite(node.value):
            raise ValueError("non-finite literal cannot be written")
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Col):
        return node.name
    if isinstance(node, Ref):
        return f"${node.node}"
    if isinstance(node, Neg):
        return f"(-{unparse(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({unparse(node.arg)})"
    return f"({unparse(node.left)} {node.op} {unparse(node.right)})"


def columns_of(node: Expr) -> frozenset[str]:
    if isinstance(node, Col):
        return frozenset([node.name])
    if isinstance(node, (Num, Ref)):
        return frozenset()
    if isinstance(node, Neg):
        return columns_of(node.operand)
    if isinstance(node, Call):
        return columns_of(node.arg)
    return columns_of(node.left) | columns_of(node.right)


def refs_of(node: Expr) -> frozenset[int]:
    if isinstance(node, Ref):
        return frozenset([node.node])
    if isinstance(node, (Num, Col)):
        return frozenset()
    if isinstance(node, Neg):
        return refs_of(node.operand)
    if isinstance(node, Call):
        return refs_of(node.arg)
    return refs_of(node.left) | refs_of(node.right)


def evaluate(node: Expr, columns: Callable[[str], object], refs: Callable[[int], object]):
    """Evaluate over scalars or numpy arrays.

    ``columns`` and ``refs`` resolve leaves lazily, so only the leaves present
    in the tree are ever looked up.  Division by zero and log of non-positive
    values raise :class:`DomainError`.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Col):
        return columns(node.name)
    if isinstance(node, Ref):
        return refs(node.node)
    if isinstance(node, Neg):
        return -evaluate(node.operand, columns, refs)
    if isinstance(node, Call):
        arg = evaluate(node.arg, columns, refs)
        if node.func == "log":
            if np.any(np.asarray(arg) <= 0):
                raise DomainError("log of a non-positive value")
            return np.log(arg)
        with np.errstate(over="ignore"):
            return np.exp(arg)
    left = evaluate(node.left, columns, refs)
    right = evaluate(node.right, columns, refs)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if np.any(np.asarray(right) == 0):
            raise DomainError("division by zero")
        return left / right
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        return np.power(np.asarray(left, dtype=float), right)


def _depends(node: Expr, ref: int) -> bool:
    return ref in refs_of(node)


def _add(a, b):
    if a == Num(0.0):
        return b
    if b == Num(0.0):
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if b == Num(0.0):
        return a
    if a == Num(0.0):
        return Neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if a == Num(0.0) or b == Num(0.0):
        return Num(0.0)
    if a == Num(1.0):
        return b
    if b == Num(1.0):
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if a == Num(0.0):
        return Num(0.0)
    if b == Num(1.0):
        return a
    return BinOp("/", a, b)


def diff(node: Expr, ref: int) -> Expr:
    """Symbolic partial derivative with respect to the parent reference ``$ref``."""
    if not _depends(node, ref):
        return Num(0.0)
    if isinstance(node, Ref):
        return Num(1.0)
    if isinstance(node, Neg):
        d = diff(node.operand, ref)
        return Num(-d.value) if isinstance(d, Num) else Neg(d)
    if isinstance(node, Call):
        d = diff(node.arg, ref)
        if node.func == "exp":
            return _mul(d, node)
        return _div(d, node.arg)
    a, b = node.left, node.right
    da, db = diff(a, ref), diff(b, ref)
    if node.op == "+":
        return _add(da, db)
    if node.op == "-":
        return _sub(da, db)
    if node.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if node.op == "/":
        # (da*b - a*db) / b^2, kept as da/b - a*db/b^2 to avoid squaring when db=0
        first = _div(da, b)
        if db == Num(0.0):
            return first
        return _sub(first, _div(_mul(a, db), BinOp("^", b, Num(2.0))))
    # power
    term = Num(0.0)
    if da != Num(0.0):
        if isinstance(b, Num):
            exponent = Num(b.value - 1.0)
            term = _mul(_mul(b, BinOp("^", a, exponent)), da)
        else:
            term = _mul(_mul(b, BinOp("^", a, BinOp("-", b, Num(1.0)))), da)
    if db != Num(0.0):
        term = _add(term, _mul(_mul(node, Call("log", a)), db))
    return term


def bind(node: Expr, values: Mapping[int, float]) -> float:
    """Evaluate an expression with only parent references (a scalar function)."""
    return float(evaluate(node, _no_columns, values.__getitem__))


def _no_columns(name):
    raise KeyError(f"column {name!r} is not available in a scalar expression")
