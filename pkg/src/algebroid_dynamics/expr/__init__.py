"""Scalar expressions over named variables with exact first and second
partial derivatives.

>>> e = parse("x1*x2", ["x1", "x2"])
>>> eval_jet2(e, {"x1": 3.0, "x2": 5.0}).grad
array([5., 3.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..errors import UnknownVariable
from .jets import Program
from .parser import FUNCTIONS, free_names, parse_node, render_node

__all__ = [
    "FUNCTIONS",
    "Expr",
    "Jet2",
    "Program",
    "compile_program",
    "constant",
    "eval_jet2",
    "evaluate",
    "parse",
    "render",
]


class Expr:
    """Parsed expression. Immutable; compiled evaluators are cached."""

    __slots__ = ("node", "variables", "source", "free", "_cache", "_lock")

    def __init__(self, node, variables, source=None):
        self.node = node
        self.variables = tuple(variables)
        self.source = source if source is not None else render_node(node)
        self.free = free_names(node)
        self._cache = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"Expr({self.source!r})"

    @property
    def is_constant(self):
        return not self.free

    def program(self, variables=None, order=0) -> Program:
        key = (tuple(variables) if variables is not None else self.variables, order)
        prog = self._cache.get(key)
        if prog is None:
            with self._lock:
                prog = self._cache.get(key)
                if prog is None:
                    missing = self.free - set(key[0])
                    if missing:
                        raise UnknownVariable(sorted(missing)[0])
                    prog = Program([self.node], key[0], order)
                    self._cache[key] = prog
        return prog


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of an expression at a point, indexed by
    the expression's declared variables."""

    value: float
    grad: np.ndarray
    hess: np.ndarray
    variables: tuple


def parse(source: str, variables) -> Expr:
    return Expr(parse_node(source, variables), variables, source)


def constant(value: float, variables=()) -> Expr:
    return parse(repr(float(value)), variables)


def render(e: Expr) -> str:
    return render_node(e.node)


def _point(e: Expr, env) -> np.ndarray:
    for name in e.free:
        if name not in env:
            raise UnknownVariable(name)
    return np.array([float(env.get(v, 0.0)) for v in e.variables])


def evaluate(e: Expr, env) -> float:
    return float(e.program(order=0)(_point(e, env))[0])


def eval_jet2(e: Expr, env) -> Jet2:
    vals, grads, hess = e.program(order=2)(_point(e, env))
    return Jet2(float(vals[0]), grads[0], hess[0], e.variables)


_batch_cache: dict = {}
_batch_lock = threading.Lock()


def compile_program(exprs, variables, order=0) -> Program:
    """One compiled evaluator for several expressions (cached by identity)."""
    exprs = tuple(exprs)
    key = (tuple(id(e) for e in exprs), tuple(variables), order)
    hit = _batch_cache.get(key)
    if hit is not None and all(a is b for a, b in zip(hit[0], exprs)):
        return hit[1]
    for e in exprs:
        missing = e.free - set(variables)
        if missing:
            raise UnknownVariable(sorted(missing)[0])
    prog = Program([e.node for e in exprs], variables, order)
    with _batch_lock:
        _batch_cache[key] = (exprs, prog)
    return prog
