"""General algebroids in local coordinates.

A structure is stored as the functions ``rho[a][i]``, ``sigma[a][i]`` (left
and right anchors, n x m) and ``c[k][i][j]`` (bracket of basis sections,
``[e_i, e_j] = c^k_ij e_k``).  Index notation used throughout::

    anchor:     v^a          = rho^a_i y^i
    bracket:    [X, Y]^k     = c^k_ij X^i Y^j + rho^a_i X^i d_a Y^k
                               - sigma^a_j Y^j d_a X^k
    Pi on E*:   Pi[xi_i, xi_j] = c^k_ij xi_k
                Pi[xi_i, x^b]  = rho^b_i
                Pi[x^b, xi_i]  = -sigma^b_i
    eps_E:      (x, y, p, xi) -> (x, xi, rho y, c^k_ij y^i xi_k + sigma^a_j p_a)
    R_tau:      (x, y, p, pi) -> (x, pi, -p, y)
    kappa:      (x, Y, rho y, Ydot) ~ (x, y, sigma Y, Ydot^j + c^j_kl y^k Y^l)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, PreconditionViolated, UnknownVariable
from .expr import Expr, compile_program, parse

SAMPLE_SEED = 0xA19EB01D
SAMPLE_COUNT = 100
HOLDS_TOL = 1e-9


def x_names(n):
    return tuple(f"x{a + 1}" for a in range(n))


def y_names(m):
    return tuple(f"y{i + 1}" for i in range(m))


def xi_names(m):
    return tuple(f"xi{i + 1}" for i in range(m))


def as_expr(item, variables) -> Expr:
    """Coerce an Expr, expression text or number to an Expr over ``variables``."""
    if isinstance(item, Expr):
        stray = item.free - set(variables)
        if stray:
            raise UnknownVariable(sorted(stray)[0])
        return item
    if isinstance(item, (int, float, np.floating, np.integer)):
        return parse(repr(float(item)), variables)
    return parse(str(item), variables)


def _vec(a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        a = a.reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError("point coordinates must be finite")
    return a


# -- coordinate points -------------------------------------------------------


@dataclass(frozen=True)
class EPoint:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x))
        object.__setattr__(self, "y", _vec(self.y))


@dataclass(frozen=True)
class DualPoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x))
        object.__setattr__(self, "xi", _vec(self.xi))


@dataclass(frozen=True)
class TangentE:
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "xdot", "ydot"):
            object.__setattr__(self, name, _vec(getattr(self, name)))


@dataclass(frozen=True)
class CotangentE:
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "p", "pi"):
            object.__setattr__(self, name, _vec(getattr(self, name)))


@dataclass(frozen=True)
class TangentDual:
    x: np.ndarray
    xi: np.ndarray
    xdot: np.ndarray
    xidot: np.ndarray

    def __post_init__(self):
        for name in ("x", "xi", "xdot", "xidot"):
            object.__setattr__(self, name, _vec(getattr(self, name)))


@dataclass(frozen=True)
class CotangentDual:
    x: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        for name in ("x", "xi", "p", "phi"):
            object.__setattr__(self, name, _vec(getattr(self, name)))


# -- the structure -------------------------------------------------------------


class AlgebroidSpec:
    """Structure functions of a general algebroid of rank ``m`` over an
    ``n``-dimensional base.

    ``sigma`` defaults to ``rho`` and ``c`` to zero. ``sample_box`` is a
    sequence of ``(lo, hi)`` pairs, one per base coordinate, used by the
    sampling-based structure checks.
    """

    def __init__(self, n, m, rho=None, sigma=None, c=None, sample_box=None, name=None):
        if n < 0 or m < 1:
            raise DimensionMismatch(f"need n >= 0 and m >= 1, got n={n}, m={m}")
        self.n, self.m, self.name = n, m, name
        self.xvars = x_names(n)
        zero = 0.0
        if rho is None:
            rho = [[zero] * m for _ in range(n)]
        self.rho = self._matrix(rho, (n, m), "rho")
        self.sigma = self.rho if sigma is None else self._matrix(sigma, (n, m), "sigma")
        if c is None:
            c = [[[zero] * m for _ in range(m)] for _ in range(m)]
        self.c = self._cube(c, m)
        if sample_box is None:
            sample_box = [(-1.0, 1.0)] * n
        box = np.asarray(sample_box, dtype=float).reshape(-1, 2) if n else np.zeros((0, 2))
        if box.shape != (n, 2):
            raise DimensionMismatch(f"sample_box must have {n} intervals, got {box.shape[0]}")
        self.sample_box = box
        self._flat = tuple(e for row in self.rho for e in row) + tuple(
            e for row in self.sigma for e in row) + tuple(
            e for plane in self.c for row in plane for e in row)
        self._prog0 = compile_program(self._flat, self.xvars, 0)
        self._prog1 = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<AlgebroidSpec{label} n={self.n} m={self.m}>"

    def _matrix(self, rows, shape, label):
        rows = list(rows)
        if len(rows) != shape[0] or any(len(r) != shape[1] for r in rows):
            got = (len(rows), len(rows[0]) if rows else 0)
            raise DimensionMismatch(f"{label} must be {shape[0]}x{shape[1]}, got {got[0]}x{got[1]}")
        return tuple(tuple(as_expr(e, self.xvars) for e in r) for r in rows)

    def _cube(self, c, m):
        c = list(c)
        if len(c) != m or any(len(p) != m or any(len(r) != m for r in p) for p in c):
            raise DimensionMismatch(f"c must be {m}x{m}x{m} (indexed [k][i][j])")
        return tuple(tuple(tuple(as_expr(e, self.xvars) for e in r) for r in p) for p in c)

    def _split(self, flat, trailing=()):
        n, m = self.n, self.m
        nm = n * m
        rho = flat[:nm].reshape((n, m) + trailing)
        sigma = flat[nm:2 * nm].reshape((n, m) + trailing)
        c = flat[2 * nm:].reshape((m, m, m) + trailing)
        return rho, sigma, c

    def structure(self, x):
        """Numeric ``(rho, sigma, c)`` at base point ``x``."""
        return self._split(self._prog0(np.asarray(x, dtype=float)))

    def structure_jet(self, x):
        """Values and base derivatives.  Derivative arrays carry the
        differentiation index last: ``drho[a, i, b] = d_b rho^a_i``."""
        if self._prog1 is None:
            self._prog1 = compile_program(self._flat, self.xvars, 1)
        vals, grads = self._prog1(np.asarray(x, dtype=float))
        return self._split(vals), self._split(grads, (self.n,))

    def sample_points(self, count=SAMPLE_COUNT, seed=SAMPLE_SEED):
        if self.n == 0:
            return np.zeros((1, 0))
        rng = np.random.default_rng(seed)
        lo, hi = self.sample_box[:, 0], self.sample_box[:, 1]
        return lo + (hi - lo) * rng.random((count, self.n))


# -- maps and residuals ---------------------------------------------------------


def anchor_left(spec: AlgebroidSpec, pt: EPoint) -> np.ndarray:
    rho, _, _ = spec.structure(pt.x)
    return rho @ pt.y


def section_exprs(spec, X):
    if len(X) != spec.m:
        raise DimensionMismatch(f"section needs {spec.m} components, got {len(X)}")
    return tuple(as_expr(e, spec.xvars) for e in X)


def bracket_sections(spec: AlgebroidSpec, X, Y, x) -> np.ndarray:
    X = section_exprs(spec, X)
    Y = section_exprs(spec, Y)
    x = np.asarray(x, dtype=float)
    prog = compile_program(X + Y, spec.xvars, 1)
    vals, grads = prog(x)
    m = spec.m
    Xv, Yv = vals[:m], vals[m:]
    dX, dY = grads[:m], grads[m:]  # dX[k, a] = d_a X^k
    rho, sigma, c = spec.structure(x)
    return (np.einsum("kij,i,j->k", c, Xv, Yv)
            + dY @ (rho @ Xv)
            - dX @ (sigma @ Yv))


def skew_residual(spec: AlgebroidSpec) -> float:
    worst = 0.0
    for x in spec.sample_points():
        rho, sigma, c = spec.structure(x)
        worst = max(worst, float(np.max(np.abs(c + c.transpose(0, 2, 1)), initial=0.0)),
                    float(np.max(np.abs(rho - sigma), initial=0.0)))
    return worst


def almost_lie_residual(spec: AlgebroidSpec) -> float:
    """max | rho^a_k c^k_ij - (rho^b_i d_b rho^a_j - rho^b_j d_b rho^a_i) |"""
    worst = 0.0
    for x in spec.sample_points():
        (rho, _, c), (drho, _, _) = spec.structure_jet(x)
        lhs = np.einsum("ak,kij->aij", rho, c)
        t = np.einsum("bi,ajb->aij", rho, drho)
        worst = max(worst, float(np.max(np.abs(lhs - (t - t.transpose(0, 2, 1))), initial=0.0)))
    return worst


def jacobiator_residual(spec: AlgebroidSpec, skew_tol=HOLDS_TOL) -> float:
    """max over l, (i, j, k) of the cyclic sum of
    rho^a_i d_a c^l_jk + c^l_im c^m_jk."""
    skew = skew_residual(spec)
    if skew > skew_tol:
        raise PreconditionViolated(f"bracket is not skew (residual {skew:.3e})")
    worst = 0.0
    for x in spec.sample_points():
        (rho, _, c), (_, _, dc) = spec.structure_jet(x)
        # term[l, i, j, k]
        term = np.einsum("ai,ljka->lijk", rho, dc) + np.einsum("lim,mjk->lijk", c, c)
        cyc = term + term.transpose(0, 2, 3, 1) + term.transpose(0, 3, 1, 2)
        worst = max(worst, float(np.max(np.abs(cyc), initial=0.0)))
    return worst


def classify(spec: AlgebroidSpec, tol=HOLDS_TOL) -> dict:
    """Residuals of every structure check and the strongest class that holds."""
    skew = skew_residual(spec)
    almost = almost_lie_residual(spec)
    jac = jacobiator_residual(spec) if skew <= tol else None
    if skew > tol:
        kind = "general algebroid"
    elif almost > tol:
        kind = "skew-algebroid"
    elif jac is None or jac > tol:
        kind = "almost-Lie algebroid"
    else:
        kind = "Lie algebroid"
    return {"skew": skew, "almost_lie": almost, "jacobi": jac, "class": kind}


def pi_tensor(spec: AlgebroidSpec, pt: DualPoint) -> np.ndarray:
    """Matrix of Pi in the basis (d_xi_1..d_xi_m, d_x1..d_xn)."""
    n, m = spec.n, spec.m
    rho, sigma, c = spec.structure(pt.x)
    P = np.zeros((m + n, m + n))
    P[:m, :m] = np.einsum("kij,k->ij", c, pt.xi)
    P[:m, m:] = rho.T
    P[m:, :m] = -sigma
    return P


def contract_pi(P: np.ndarray, dH_xi, dH_x) -> np.ndarray:
    """iota_{dH} Pi, contracting the first slot; returns (xidot, xdot) stacked."""
    return P.T @ np.concatenate([dH_xi, dH_x])


def epsilon(spec: AlgebroidSpec, v: CotangentE) -> TangentDual:
    rho, sigma, c = spec.structure(v.x)
    xidot = np.einsum("kij,i,k->j", c, v.y, v.pi) + sigma.T @ v.p
    return TangentDual(v.x, v.pi, rho @ v.y, xidot)


def r_tau(v: CotangentE) -> CotangentDual:
    return CotangentDual(v.x, v.pi, -v.p, v.y)


def r_tau_inverse(w: CotangentDual) -> CotangentE:
    return CotangentE(w.x, w.phi, -w.p, w.xi)


def kappa_pair(spec: AlgebroidSpec, x, y, Y, Ydot):
    x, y, Y, Ydot = (np.asarray(a, dtype=float) for a in (x, y, Y, Ydot))
    rho, sigma, c = spec.structure(x)
    v = TangentE(x, Y, rho @ y, Ydot)
    v_prime = TangentE(x, y, sigma @ Y, Ydot + np.einsum("jkl,k,l->j", c, y, Y))
    return v, v_prime


def pair_tangent(v: TangentE, w: TangentDual) -> float:
    """Canonical pairing of TE and TE* over the same point of TM."""
    return float(v.ydot @ w.xi + v.y @ w.xidot)


def pair_cotangent(v: TangentE, w: CotangentE) -> float:
    """Canonical pairing of TE and T*E over the same point of E."""
    return float(v.xdot @ w.p + v.ydot @ w.pi)


def duality_residual(spec: AlgebroidSpec, x, y, Y, Ydot, p, pi_) -> float:
    v, v_prime = kappa_pair(spec, x, y, Y, Ydot)
    v_star = CotangentE(x, y, p, pi_)
    return abs(pair_tangent(v, epsilon(spec, v_star)) - pair_cotangent(v_prime, v_star))
