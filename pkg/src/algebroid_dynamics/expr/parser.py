"""Tokenizer, AST and precedence-climbing parser for scalar expressions.

Grammar (loosest to tightest)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

so ``-x^2`` is ``-(x^2)`` and ``2^-1`` is allowed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from ..errors import ExprSyntaxError, UnknownVariable

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int  # 1-based


def tokenize(source: str) -> list[_Tok]:
    toks = []
    i = 0
    while i < len(source):
        m = _TOKEN.match(source, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[i]!r}", i + 1)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), i + 1))
        i = m.end()
    # end-of-input sits just after the last non-blank character
    toks.append(_Tok("end", "", len(source.rstrip()) + 1))
    return toks


class _Parser:
    def __init__(self, source, variables):
        self.toks = tokenize(source)
        self.i = 0
        self.variables = set(variables)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok.text != text:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", tok.pos)
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            if self.peek().text == "(" and self.peek().kind == "op":
                raise ExprSyntaxError(f"unknown function {tok.text!r}", tok.pos)
            if tok.text not in self.variables:
                raise UnknownVariable(tok.text, tok.pos)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {found}", tok.pos)


def parse_node(source: str, variables) -> Node:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 1)
    return _Parser(source, variables).parse()


def render_node(node: Node) -> str:
    """Fully parenthesised text that reparses to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{render_node(node.arg)})"
    if isinstance(node, Bin):
        return f"({render_node(node.left)}{node.op}{render_node(node.right)})"
    return f"{node.fn}({render_node(node.arg)})"


def free_names(node: Node) -> frozenset:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Bin):
        return free_names(node.left) | free_names(node.right)
    return free_names(node.arg)
