"""Second-order forward-mode differentiation of expression trees.

Each node is propagated as a truncated Taylor polynomial (value, gradient,
Hessian).  Instead of interpreting the tree with jet objects at run time, the
propagation rules are staged into straight-line Python source once per
(expressions, variables, order) triple; structurally-zero gradient and
Hessian entries are dropped at staging time.  The arithmetic performed is
the same as a dual-number evaluation, just without per-node dispatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError
from .parser import Bin, Call, Neg, Num, Var

# -- checked scalar kernels ---------------------------------------------------


def _div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _is_int(p):
    return p == math.floor(p)


def _pow(u, p):
    if u < 0.0 and not _is_int(p):
        raise DomainError(f"negative base {u!r} to non-integer power {p!r}")
    try:
        r = u**p
    except ZeroDivisionError:
        raise DomainError(f"zero to negative power {p!r}") from None
    except OverflowError:
        raise DomainError(f"overflow in {u!r}^{p!r}") from None
    return float(r)


def _exp(u):
    try:
        return math.exp(u)
    except OverflowError:
        raise DomainError(f"exp overflow at {u!r}") from None


def _log(u):
    if u <= 0.0:
        raise DomainError(f"log of non-positive argument {u!r}")
    return math.log(u)


def _sqrt(u):
    if u < 0.0:
        raise DomainError(f"sqrt of negative argument {u!r}")
    return math.sqrt(u)


def _tan(u):
    return math.tan(u)


_VALUE_FN = {
    "sin": "math.sin",
    "cos": "math.cos",
    "tan": "_tan",
    "exp": "_exp",
    "log": "_log",
    "sqrt": "_sqrt",
    "abs": "abs",
    "tanh": "math.tanh",
}

# (f, f', f'') at u; f must be the same kernel the value path uses


def _d_sin(u):
    s = math.sin(u)
    return s, math.cos(u), -s


def _d_cos(u):
    c = math.cos(u)
    return c, -math.sin(u), -c


def _d_tan(u):
    t = _tan(u)
    d = 1.0 + t * t
    return t, d, 2.0 * t * d


def _d_exp(u):
    e = _exp(u)
    return e, e, e


def _d_log(u):
    v = _log(u)
    return v, 1.0 / u, -1.0 / (u * u)


def _d_sqrt(u):
    s = _sqrt(u)
    if s == 0.0:
        raise DomainError("sqrt is not differentiable at 0")
    return s, 0.5 / s, -0.25 / (s * u)


def _d_abs(u):
    # subgradient 0 at the kink
    return abs(u), (u > 0.0) - (u < 0.0), 0.0


def _d_tanh(u):
    t = math.tanh(u)
    d = 1.0 - t * t
    return t, d, -2.0 * t * d


def _d_pow(u, p):
    v = _pow(u, p)
    d1 = p * _pow(u, p - 1.0) if p != 0.0 else 0.0
    d2 = p * (p - 1.0) * _pow(u, p - 2.0) if p not in (0.0, 1.0) else 0.0
    return v, d1, d2


_KERNELS = {
    "math": math,
    "_div": _div,
    "_pow": _pow,
    "_exp": _exp,
    "_log": _log,
    "_sqrt": _sqrt,
    "_tan": _tan,
    "_d_sin": _d_sin,
    "_d_cos": _d_cos,
    "_d_tan": _d_tan,
    "_d_exp": _d_exp,
    "_d_log": _d_log,
    "_d_sqrt": _d_sqrt,
    "_d_abs": _d_abs,
    "_d_tanh": _d_tanh,
    "_d_pow": _d_pow,
}

# -- staging -------------------------------------------------------------------


@dataclass
class _J:
    v: str
    g: dict = field(default_factory=dict)  # i -> code
    h: dict = field(default_factory=dict)  # (i, j), i <= j -> code


def _sum(terms):
    return " + ".join(terms) if len(terms) > 1 else terms[0]


class _Stager:
    def __init__(self, index, order):
        self.index = index
        self.order = order
        self.lines = []
        self.n = 0

    def tmp(self, code):
        name = f"_t{self.n}"
        self.n += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def emit(self, node) -> _J:
        if isinstance(node, Num):
            return _J(repr(node.value))
        if isinstance(node, Var):
            i = self.index[node.name]
            return _J(f"_v{i}", {i: "1.0"} if self.order >= 1 else {})
        if isinstance(node, Neg):
            a = self.emit(node.arg)
            return _J(
                self.tmp(f"-{a.v}"),
                {i: self.tmp(f"-{c}") for i, c in a.g.items()},
                {k: self.tmp(f"-{c}") for k, c in a.h.items()},
            )
        if isinstance(node, Call):
            return self.unary(node.fn, self.emit(node.arg))
        a = self.emit(node.left)
        b = self.emit(node.right)
        if node.op in "+-":
            return self.additive(node.op, a, b)
        if node.op == "*":
            return self.mul(a, b)
        if node.op == "/":
            return self.div(a, b)
        return self.pow(a, b)

    def additive(self, op, a, b):
        v = self.tmp(f"{a.v} {op} {b.v}")

        def comb(x, y):
            out = {}
            for k in sorted(set(x) | set(y)):
                if k in x and k in y:
                    out[k] = self.tmp(f"{x[k]} {op} {y[k]}")
                elif k in x:
                    out[k] = x[k]
                else:
                    out[k] = self.tmp(f"-{y[k]}") if op == "-" else y[k]
            return out

        return _J(v, comb(a.g, b.g), comb(a.h, b.h))

    def mul(self, a, b):
        v = self.tmp(f"{a.v} * {b.v}")
        g = {}
        for i in sorted(set(a.g) | set(b.g)):
            terms = []
            if i in a.g:
                terms.append(f"{a.g[i]} * {b.v}")
            if i in b.g:
                terms.append(f"{a.v} * {b.g[i]}")
            g[i] = self.tmp(_sum(terms))
        h = {}
        if self.order >= 2:
            keys = set(a.h) | set(b.h)
            keys |= {(min(i, j), max(i, j)) for i in a.g for j in b.g}
            for i, j in sorted(keys):
                terms = []
                if (i, j) in a.h:
                    terms.append(f"{a.h[i, j]} * {b.v}")
                if (i, j) in b.h:
                    terms.append(f"{a.v} * {b.h[i, j]}")
                if i in a.g and j in b.g:
                    terms.append(f"{a.g[i]} * {b.g[j]}")
                if j in a.g and i in b.g:
                    terms.append(f"{a.g[j]} * {b.g[i]}")
                h[i, j] = self.tmp(_sum(terms))
        return _J(v, g, h)

    def div(self, a, b):
        # q = a/b;  q' = (a' - q b') / b;  q'' = (a'' - q b'' - q'b' - b'q') / b
        v = self.tmp(f"_div({a.v}, {b.v})")
        if not (a.g or b.g):
            return _J(v)
        g = {}
        for i in sorted(set(a.g) | set(b.g)):
            num = a.g.get(i, "0.0")
            if i in b.g:
                num = f"({num} - {v} * {b.g[i]})"
            g[i] = self.tmp(f"{num} / {b.v}")
        h = {}
        if self.order >= 2:
            keys = set(a.h) | set(b.h)
            keys |= {(min(i, j), max(i, j)) for i in g for j in b.g}
            for i, j in sorted(keys):
                terms = [a.h[i, j]] if (i, j) in a.h else ["0.0"]
                if (i, j) in b.h:
                    terms.append(f"- {v} * {b.h[i, j]}")
                if i in g and j in b.g:
                    terms.append(f"- {g[i]} * {b.g[j]}")
                if j in g and i in b.g:
                    terms.append(f"- {g[j]} * {b.g[i]}")
                h[i, j] = self.tmp(f"({' '.join(terms)}) / {b.v}")
        return _J(v, g, h)

    def chain(self, f0, f1, f2, a):
        g = {i: self.tmp(f"{f1} * {c}") for i, c in a.g.items()}
        h = {}
        if self.order >= 2:
            keys = set(a.h) | {(i, j) for i in a.g for j in a.g if i <= j}
            for i, j in sorted(keys):
                terms = []
                if (i, j) in a.h:
                    terms.append(f"{f1} * {a.h[i, j]}")
                if i in a.g and j in a.g:
                    terms.append(f"{f2} * {a.g[i]} * {a.g[j]}")
                h[i, j] = self.tmp(_sum(terms))
        return _J(f0, g, h)

    def unary(self, fn, a):
        if not a.g:
            return _J(self.tmp(f"{_VALUE_FN[fn]}({a.v})"))
        f = self.tmp(f"_d_{fn}({a.v})")
        return self.chain(f"{f}[0]", f"{f}[1]", f"{f}[2]", a)

    def pow(self, a, b):
        if not (a.g or b.g):
            return _J(self.tmp(f"_pow({a.v}, {b.v})"))
        if not b.g:
            f = self.tmp(f"_d_pow({a.v}, {b.v})")
            return self.chain(f"{f}[0]", f"{f}[1]", f"{f}[2]", a)
        # variable exponent: a^b = exp(b log a); value kept on the checked pow
        # kernel so it matches plain evaluation bit for bit
        value = self.tmp(f"_pow({a.v}, {b.v})")
        log_a = self.unary("log", a)
        j = self.unary("exp", self.mul(b, log_a))
        j.v = value
        return j


class Program:
    """Compiled evaluator for a batch of expressions over fixed variables.

    ``program(z)`` returns values (k,), and for order >= 1 gradients
    (k, nv), for order 2 Hessians (k, nv, nv).
    """

    def __init__(self, nodes, variables, order):
        self.variables = tuple(variables)
        self.order = order
        self.size = len(nodes)
        nv = len(self.variables)
        index = {name: i for i, name in enumerate(self.variables)}
        st = _Stager(index, order)
        outs = [st.emit(nd) for nd in nodes]

        head = ["def _program(_z):"]
        if nv:
            names = ", ".join(f"_v{i}" for i in range(nv))
            head.append(f"    {names}, = _z.tolist()")
        vals = ", ".join(o.v for o in outs)
        ret = [f"({vals},)" if outs else "()"]

        gpos, gcode = [], []
        hpos, hsrc, hcode = [], [], []
        for k, o in enumerate(outs):
            for i, c in o.g.items():
                gpos.append(k * nv + i)
                gcode.append(c)
            for (i, j), c in o.h.items():
                src = len(hcode)
                hcode.append(c)
                hpos.append(k * nv * nv + i * nv + j)
                hsrc.append(src)
                if i != j:
                    hpos.append(k * nv * nv + j * nv + i)
                    hsrc.append(src)
        if order >= 1:
            ret.append(f"({', '.join(gcode)},)" if gcode else "()")
        if order >= 2:
            ret.append(f"({', '.join(hcode)},)" if hcode else "()")
        src = "\n".join(head + st.lines + [f"    return ({', '.join(ret)},)"])
        scope = dict(_KERNELS)
        exec(compile(src, "<expr-program>", "exec"), scope)
        self.source = src
        self._fn = scope["_program"]
        self._gpos = np.array(gpos, dtype=np.intp)
        self._hpos = np.array(hpos, dtype=np.intp)
        self._hsrc = np.array(hsrc, dtype=np.intp)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = self._fn(z)
        vals = np.array(out[0], dtype=float)
        if self.order == 0:
            return vals
        nv = len(self.variables)
        grads = np.zeros(self.size * nv)
        if out[1]:
            grads[self._gpos] = out[1]
        grads = grads.reshape(self.size, nv)
        if self.order == 1:
            return vals, grads
        hess = np.zeros(self.size * nv * nv)
        if out[2]:
            hess[self._hpos] = np.array(out[2])[self._hsrc]
        return vals, grads, hess.reshape(self.size, nv, nv)
