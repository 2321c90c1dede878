"""Functions on a vector bundle in coordinates (x^a, v^i): Lagrangians on E,
Hamiltonians on E*, constraint functions on E.  Splits the jets of the
underlying expressions into base and fiber blocks."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .algebroid import as_expr, x_names, xi_names, y_names
from .expr import Expr, compile_program


class FiberJet(NamedTuple):
    value: np.ndarray
    dx: Optional[np.ndarray] = None   # d/dx^a
    dv: Optional[np.ndarray] = None   # d/dv^i
    dvv: Optional[np.ndarray] = None  # d2/dv^i dv^j
    dvx: Optional[np.ndarray] = None  # d2/dv^i dx^a
    dxx: Optional[np.ndarray] = None


class FiberMap:
    """``k`` expressions in ``(x1..xn, <prefix>1..<prefix>m)``.

    Calling returns a FiberJet whose arrays carry a leading axis of length k.
    """

    scalar = False

    def __init__(self, exprs, n, m, prefix="y"):
        self.n, self.m, self.prefix = n, m, prefix
        fibre = y_names(m) if prefix == "y" else xi_names(m) if prefix == "xi" else tuple(
            f"{prefix}{i + 1}" for i in range(m))
        self.variables = x_names(n) + fibre
        self.exprs = tuple(as_expr(e, self.variables) for e in exprs)
        self._progs = {}

    def __len__(self):
        return len(self.exprs)

    def _program(self, order):
        prog = self._progs.get(order)
        if prog is None:
            if len(self.exprs) == 1:
                prog = self.exprs[0].program(self.variables, order)
            else:
                prog = compile_program(self.exprs, self.variables, order)
            self._progs[order] = prog
        return prog

    def __call__(self, x, v, order=0) -> FiberJet:
        z = np.concatenate([np.asarray(x, dtype=float), np.asarray(v, dtype=float)])
        n = self.n
        if order == 0:
            out = FiberJet(self._program(0)(z))
        elif order == 1:
            val, g = self._program(1)(z)
            out = FiberJet(val, g[:, :n], g[:, n:])
        else:
            val, g, h = self._program(2)(z)
            out = FiberJet(val, g[:, :n], g[:, n:], h[:, n:, n:], h[:, n:, :n], h[:, :n, :n])
        if self.scalar:
            out = FiberJet(*(None if a is None else a[0] for a in out))
        return out

    jet = __call__


class FiberFunction(FiberMap):
    """A single scalar function; jets come back without the leading axis."""

    scalar = True

    def __init__(self, expr, n, m, prefix="xi"):
        super().__init__([expr], n, m, prefix)
        self.expr = self.exprs[0]


def as_fiber_function(f, n, m, prefix):
    """Accept an Expr / expression text, or anything already exposing a
    ``jet(x, v, order)`` method (e.g. a reduced Hamiltonian)."""
    if isinstance(f, (Expr, str)):
        return FiberFunction(f, n, m, prefix)
    if hasattr(f, "jet"):
        return f
    raise TypeError(f"cannot use {type(f).__name__} as a fiber function")


def hamiltonian(H, n, m):
    return as_fiber_function(H, n, m, "xi")


def lagrangian(L, n, m):
    return as_fiber_function(L, n, m, "y")
