"""Arithmetic expressions in x, y, t for sources and initial data.

Grammar (whitespace ignored)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := number | "x" | "y" | "t" | "pi" | func "(" expr ")" | "(" expr ")"
    func   := "sin" | "cos" | "exp"

so ``-x^2`` is ``-(x^2)`` and ``2^-1`` is ``0.5``.
"""
from __future__ import annotations

import math
import re
from typing import NamedTuple, Union

import numpy as np

from .errors import EvalError, ParseError

VARIABLES = ("x", "y", "t")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


class Num(NamedTuple):
    value: float


class Var(NamedTuple):
    name: str


class Neg(NamedTuple):
    arg: "Node"


class Bin(NamedTuple):
    op: str
    left: "Node"
    right: "Node"


class Call(NamedTuple):
    name: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


class _Tok(NamedTuple):
    kind: str
    text: str
    offset: int   # byte offset into the UTF-8 source


def _tokenize(text: str):
    toks = []
    pos = 0
    byte = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", offset=byte)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), byte))
        byte += len(m.group().encode("utf-8"))
        pos = m.end()
    toks.append(_Tok("end", "", byte))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        if self.tok.text != text:
            raise ParseError(f"expected {text!r}, found {self._describe()}", offset=self.tok.offset)
        return self.advance()

    def _describe(self):
        return "end of input" if self.tok.kind == "end" else repr(self.tok.text)

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.advance().text
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.advance().text
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in VARIABLES:
                return Var(tok.text)
            if tok.text in CONSTANTS:
                return Num(CONSTANTS[tok.text])
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            raise ParseError(f"unknown identifier {tok.text!r}", offset=tok.offset)
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {self._describe()}", offset=tok.offset)


class Expr:
    """Parsed expression; evaluation broadcasts over numpy arrays."""

    def __init__(self, text: str, tree: Node):
        self.text = text
        self.tree = tree

    def __repr__(self):
        return f"Expr({self.text!r})"

    def variables(self) -> set:
        out = set()

        def walk(n):
            if isinstance(n, Var):
                out.add(n.name)
            elif isinstance(n, Neg):
                walk(n.arg)
            elif isinstance(n, Call):
                walk(n.arg)
            elif isinstance(n, Bin):
                walk(n.left)
                walk(n.right)
        walk(self.tree)
        return out

    def __call__(self, x=0.0, y=0.0, t=0.0):
        env = {"x": np.asarray(x, dtype=float), "y": np.asarray(y, dtype=float),
               "t": np.asarray(t, dtype=float)}
        with np.errstate(all="ignore"):
            val = _eval(self.tree, env)
        shape = np.broadcast_shapes(*(v.shape for v in env.values()))
        val = np.broadcast_to(val, shape)
        if not np.all(np.isfinite(val)):
            raise EvalError(f"{self.text!r} is not finite on the given points")
        return val if val.ndim else float(val)


def _eval(n, env):
    if isinstance(n, Num):
        return np.float64(n.value)
    if isinstance(n, Var):
        return env[n.name]
    if isinstance(n, Neg):
        return -_eval(n.arg, env)
    if isinstance(n, Call):
        return FUNCTIONS[n.name](_eval(n.arg, env))
    a = _eval(n.left, env)
    b = _eval(n.right, env)
    if n.op == "+":
        return a + b
    if n.op == "-":
        return a - b
    if n.op == "*":
        return a * b
    if n.op == "/":
        if np.any(b == 0):
            raise EvalError("division by zero")
        return a / b
    if np.any((a == 0) & (b < 0)):
        raise EvalError("zero raised to a negative power")
    return np.power(a, b)


def parse_expr(text: str) -> Expr:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    parser = _Parser(text)
    tree = parser.expr()
    if parser.tok.kind != "end":
        raise ParseError(f"unexpected {parser._describe()}", offset=parser.tok.offset)
    return Expr(text, tree)
