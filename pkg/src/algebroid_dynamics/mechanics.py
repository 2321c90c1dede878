"""Unconstrained Lagrangian and Hamiltonian dynamics on an algebroid, fixed-step
integration, and a numerical check of the variational (Livens-type)
characterisation of Hamiltonian trajectories on F = E (+) E*.

Conventions (c[k, i, j] = c^k_ij)::

    Euler-Lagrange:  d/dt L_{y^i} = sigma^a_i L_{x^a} + c^k_ji y^j L_{y^k},
                     xdot^a = rho^a_i y^i
    Hamilton:        xidot_j = xi_k c^k_ij H_{xi_i} - sigma^a_j H_{x^a},
                     xdot^a = rho^a_i H_{xi_i}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson

from .algebroid import AlgebroidSpec, DualPoint, EPoint, TangentDual, TangentE, _vec
from .errors import (
    GridTooCoarse,
    MechanicsError,
    NoConvergence,
    NonFiniteState,
    PreconditionViolated,
    SingularLegendre,
)
from .fiber import hamiltonian, lagrangian

COND_LIMIT = 1e12


def contract_first(v, c):
    """v_k c[k, i, j] as an (m, m) matrix."""
    return (v @ c.reshape(c.shape[0], -1)).reshape(c.shape[1:])


def ill_conditioned(A) -> bool:
    if A.shape == (1, 1):
        return not abs(A[0, 0]) > 0.0
    return np.linalg.cond(A) > COND_LIMIT


def solve_checked(A, b, exc, what):
    """Solve A z = b, raising ``exc`` when A is numerically singular."""
    if A.size == 0:
        return np.zeros(0)
    if ill_conditioned(A):
        raise exc(f"{what} is singular (condition > {COND_LIMIT:.0e})")
    if A.shape == (1, 1):
        return b / A[0, 0]
    return np.linalg.solve(A, b)


@dataclass(frozen=True)
class MixedPoint:
    """Point of E (+) E*."""

    x: np.ndarray
    y: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "xi"):
            object.__setattr__(self, name, _vec(getattr(self, name)))


@dataclass
class Trajectory:
    """States on a time grid.  ``layout`` maps block names (``"x"``, ``"xi"``,
    ``"p"``, ...) to column slices of ``states``."""

    t: np.ndarray
    states: np.ndarray
    layout: dict
    multipliers: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.states = _rows(self.states, len(self.t))
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @classmethod
    def from_blocks(cls, t, multipliers=None, **blocks):
        t = np.asarray(t, dtype=float)
        layout, cols, start = {}, [], 0
        for name, arr in blocks.items():
            arr = _rows(arr, len(t))
            layout[name] = slice(start, start + arr.shape[1])
            start += arr.shape[1]
            cols.append(arr)
        states = np.hstack(cols) if cols else np.zeros((len(t), 0))
        return cls(t, states, layout, multipliers)

    def __getitem__(self, name):
        return self.states[:, self.layout[name]]

    def __len__(self):
        return len(self.t)

    @property
    def uniform(self):
        d = np.diff(self.t)
        return bool(np.all(np.abs(d - d[0]) <= 1e-12 * abs(d[0])))

    def with_block(self, name, values):
        blocks = {k: self[k] for k in self.layout}
        blocks[name] = values
        return Trajectory.from_blocks(self.t, self.multipliers, **blocks)


def _rows(arr, count):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == count:
        return arr
    return arr.reshape(count, -1)


def time_derivative(values, t):
    """Second-order finite differences (centred inside, one-sided at the ends)."""
    if len(t) < 3:
        raise GridTooCoarse(f"need at least 3 nodes, got {len(t)}")
    values = np.asarray(values, dtype=float)
    if values.shape[1:] and values.shape[1] == 0:
        return np.zeros_like(values)
    return np.gradient(values, t, axis=0, edge_order=2)


# -- fixed-step integration ----------------------------------------------------


def _euler(f, t, s, h):
    return s + h * f(t, s)


def _heun(f, t, s, h):
    k1 = f(t, s)
    k2 = f(t + h, s + h * k1)
    return s + 0.5 * h * (k1 + k2)


def _rk4(f, t, s, h):
    k1 = f(t, s)
    k2 = f(t + 0.5 * h, s + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, s + 0.5 * h * k2)
    k4 = f(t + h, s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {"rk4": _rk4, "euler": _euler, "heun": _heun}


def time_grid(t0, t1, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    ratio = (t1 - t0) / dt
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        steps = math.ceil(ratio)
    grid = t0 + dt * np.arange(steps + 1, dtype=float)
    grid[-1] = t1
    return grid


def integrate(rhs: Callable, s0, t0, t1, dt, method="rk4", layout=None) -> Trajectory:
    """Integrate ``s' = rhs(t, s)`` with a fixed step; the last step is
    shortened so the grid ends on ``t1``."""
    try:
        step = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(STEPPERS)}") from None
    grid = time_grid(t0, t1, dt)
    s = np.array(s0, dtype=float)
    out = np.empty((len(grid), s.size))
    out[0] = s

    def f(t, state):
        try:
            return rhs(t, state)
        except MechanicsError as exc:
            if exc.time is None:
                exc.time = t
            raise

    for k in range(len(grid) - 1):
        s = step(f, grid[k], s, grid[k + 1] - grid[k])
        if not np.all(np.isfinite(s)):
            err = NonFiniteState("state became non-finite")
            err.time = float(grid[k + 1])
            raise err
        out[k + 1] = s
    if layout is None:
        layout = {"s": slice(0, s.size)}
    return Trajectory(grid, out, layout)


# -- variation generators ------------------------------------------------------


@dataclass
class VariationGenerator:
    """Coefficients of an admissible variation of a curve in F: ``f`` generates
    the E-part through kappa, ``h`` is the free E*-direction.  Both map a
    time array (N,) to (N, m)."""

    f: Callable
    h: Callable
    t0: float
    t1: float
    endpoint_flag: bool = True
    fdot: Optional[Callable] = None

    def __post_init__(self):
        if self.endpoint_flag:
            ends = np.asarray(self.f(np.array([self.t0, self.t1])))
            if np.max(np.abs(ends), initial=0.0) > 1e-14:
                raise ValueError("endpoint_flag set but f does not vanish at the ends")


@dataclass
class TrigVariation:
    """f^i = sum_k a_ik sin(k pi s), h_i = sum_k b_ik cos(k pi s), s in [0, 1]."""

    a: np.ndarray  # (m, K)
    b: np.ndarray  # (m, K + 1)
    t0: float
    t1: float
    _ks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._ks = np.arange(1, self.a.shape[1] + 1) * np.pi

    def _s(self, t):
        return (np.atleast_1d(np.asarray(t, dtype=float)) - self.t0) / (self.t1 - self.t0)

    def f(self, t):
        return np.sin(np.outer(self._s(t), self._ks)) @ self.a.T

    def fdot(self, t):
        scale = 1.0 / (self.t1 - self.t0)
        return (np.cos(np.outer(self._s(t), self._ks)) * self._ks * scale) @ self.a.T

    def h(self, t):
        ks = np.arange(self.b.shape[1]) * np.pi
        return np.cos(np.outer(self._s(t), ks)) @ self.b.T

    def generator(self) -> VariationGenerator:
        return VariationGenerator(self.f, self.h, self.t0, self.t1, True, self.fdot)


def random_generator(m, t0, t1, rng, terms=3) -> VariationGenerator:
    a = rng.uniform(-1.0, 1.0, (m, terms))
    b = rng.uniform(-1.0, 1.0, (m, terms + 1))
    return TrigVariation(a, b, t0, t1).generator()


def zero_generator(m, t0, t1) -> VariationGenerator:
    def zero(t):
        return np.zeros((np.size(t), m))

    return VariationGenerator(zero, zero, t0, t1, True, zero)


# -- admissible paths and variations -------------------------------------------


def admissibility_residual(spec: AlgebroidSpec, traj: Trajectory) -> float:
    """max_t | xdot - rho(x) y | along a trajectory with blocks x, y."""
    X, Y = traj["x"], traj["y"]
    xdot = time_derivative(X, traj.t)
    if spec.n == 0:
        return 0.0
    worst = 0.0
    for k in range(len(traj)):
        rho, _, _ = spec.structure(X[k])
        worst = max(worst, float(np.max(np.abs(xdot[k] - rho @ Y[k]))))
    return worst


def _sample(fn, t, m):
    if callable(fn):
        return _rows(fn(t), len(t))
    return _rows(fn, len(t))


def variation_from_b(spec: AlgebroidSpec, gamma: Trajectory, b, bdot=None) -> Trajectory:
    """delta_b gamma = (x, y, sigma b, bdot + c(y, b)) node by node.

    ``b`` (and optionally ``bdot``) are callables of the time array or arrays
    on the grid; without ``bdot`` the derivative is taken by finite
    differences."""
    t = gamma.t
    B = _sample(b, t, spec.m)
    Bdot = time_derivative(B, t) if bdot is None else _sample(bdot, t, spec.m)
    X, Y = gamma["x"], gamma["y"]
    dx = np.zeros_like(X)
    dy = np.empty_like(Y)
    for k in range(len(t)):
        _, sigma, c = spec.structure(X[k])
        dx[k] = sigma @ B[k]
        dy[k] = Bdot[k] + np.einsum("kij,i,j->k", c, Y[k], B[k])
    return Trajectory.from_blocks(t, x=X, y=Y, dx=dx, dy=dy)


# -- Lagrangian side -------------------------------------------------------------


def lambda_L(L, pt: EPoint) -> DualPoint:
    Lf = lagrangian(L, pt.x.size, pt.y.size)
    return DualPoint(pt.x, Lf(pt.x, pt.y, order=1).dv)


def Lambda_L(spec: AlgebroidSpec, L, pt: EPoint) -> TangentDual:
    Lf = lagrangian(L, spec.n, spec.m)
    jet = Lf(pt.x, pt.y, order=1)
    rho, sigma, c = spec.structure(pt.x)
    xidot = np.einsum("kij,i,k->j", c, pt.y, jet.dv) + sigma.T @ jet.dx
    return TangentDual(pt.x, jet.dv, rho @ pt.y, xidot)


def legendre_solve(Lf, x, p, y_guess, tol=1e-12, max_iter=50, max_halvings=20):
    """Solve dL/dy(x, y) = p for y by damped Newton."""
    y = np.array(y_guess, dtype=float)
    scale = max(1.0, float(np.max(np.abs(p), initial=0.0)))
    for _ in range(max_iter):
        jet = Lf(x, y, order=2)
        r = jet.dv - p
        rn = float(np.max(np.abs(r), initial=0.0))
        if rn <= tol * scale:
            return y, jet
        J = jet.dvv
        step = solve_checked(J, r, SingularLegendre, "fiber Hessian of the Lagrangian")
        lam = 1.0
        for _ in range(max_halvings + 1):
            y_try = y - lam * step
            jet_try = Lf(x, y_try, order=2)
            rn_try = float(np.max(np.abs(jet_try.dv - p), initial=0.0))
            if rn_try < rn:
                break
            lam *= 0.5
        else:
            raise NoConvergence("Legendre Newton step failed to reduce the residual")
        y = y_try
        if rn_try <= tol * scale:
            return y, jet_try
    raise NoConvergence(f"Legendre map not inverted within {max_iter} iterations")


def _el_field(rho, sigma, c, y, jet):
    xdot = rho @ y
    pdot = sigma.T @ jet.dx + y @ contract_first(jet.dv, c)
    return xdot, pdot


def el_rhs(spec: AlgebroidSpec, L, x, p, y_guess):
    """Returns (xdot, pdot, y) for the Euler-Lagrange system in momentum form."""
    Lf = lagrangian(L, spec.n, spec.m)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    y, jet = legendre_solve(Lf, x, p, y_guess)
    rho, sigma, c = spec.structure(x)
    xdot, pdot = _el_field(rho, sigma, c, y, jet)
    return xdot, pdot, y


class ELVectorField:
    """``rhs(t, s)`` on the state s = (x, p); the last solved velocity is used
    as the next Newton guess."""

    def __init__(self, spec: AlgebroidSpec, L):
        self.spec = spec
        self.Lf = lagrangian(L, spec.n, spec.m)
        self.y = np.zeros(spec.m)

    def velocity(self, x, p):
        y, _ = legendre_solve(self.Lf, x, p, self.y)
        return y

    def __call__(self, t, s):
        n = self.spec.n
        x, p = s[:n], s[n:]
        y, jet = legendre_solve(self.Lf, x, p, self.y)
        self.y = y
        rho, sigma, c = self.spec.structure(x)
        xdot, pdot = _el_field(rho, sigma, c, y, jet)
        return np.concatenate([xdot, pdot])


def el_tangent_prolongation_residual(spec: AlgebroidSpec, L, traj: Trajectory) -> float:
    """max distance between d/dt lambda_L(gamma) (finite differences) and
    Lambda_L(gamma) along an E-path with blocks x, y."""
    Lf = lagrangian(L, spec.n, spec.m)
    X, Y, t = traj["x"], traj["y"], traj.t
    mom = np.empty_like(Y)
    target_x = np.empty_like(X)
    target_p = np.empty_like(Y)
    for k in range(len(t)):
        jet = Lf(X[k], Y[k], order=1)
        rho, sigma, c = spec.structure(X[k])
        mom[k] = jet.dv
        target_x[k], target_p[k] = _el_field(rho, sigma, c, Y[k], jet)
    dx = time_derivative(X, t) - target_x
    dp = time_derivative(mom, t) - target_p
    return float(max(np.max(np.abs(dx), initial=0.0), np.max(np.abs(dp), initial=0.0)))


# -- Hamiltonian side ------------------------------------------------------------


def hamilton_field_at(rho, sigma, c, xi, dH_x, dH_xi):
    xdot = rho @ dH_xi
    xidot = dH_xi @ contract_first(xi, c) - sigma.T @ dH_x
    return xdot, xidot


def hamilton_rhs(spec, H, pt: DualPoint):
    """(xdot, xidot) of X_H.  ``spec`` may be any object with ``n``, ``m`` and
    ``structure(x)``; ``H`` an Expr or an object with ``jet(x, xi, order)``."""
    Hf = hamiltonian(H, spec.n, spec.m)
    jet = Hf.jet(pt.x, pt.xi, order=1)
    rho, sigma, c = spec.structure(pt.x)
    return hamilton_field_at(rho, sigma, c, pt.xi, jet.dx, jet.dv)


class HamiltonVectorField:
    """``rhs(t, s)`` on s = (x, xi)."""

    def __init__(self, spec, H):
        self.spec = spec
        self.Hf = hamiltonian(H, spec.n, spec.m)

    def __call__(self, t, s):
        n = self.spec.n
        x, xi = s[:n], s[n:]
        jet = self.Hf.jet(x, xi, order=1)
        rho, sigma, c = self.spec.structure(x)
        xdot, xidot = hamilton_field_at(rho, sigma, c, xi, jet.dx, jet.dv)
        return np.concatenate([xdot, xidot])


def integrate_hamilton(spec, H, x0, xi0, t0, t1, dt, method="rk4") -> Trajectory:
    n, m = spec.n, spec.m
    s0 = np.concatenate([np.asarray(x0, dtype=float).reshape(n), np.asarray(xi0, dtype=float)])
    return integrate(HamiltonVectorField(spec, H), s0, t0, t1, dt, method,
                     {"x": slice(0, n), "xi": slice(n, n + m)})


def integrate_lagrange(spec, L, x0, p0, t0, t1, dt, method="rk4") -> Trajectory:
    n, m = spec.n, spec.m
    s0 = np.concatenate([np.asarray(x0, dtype=float).reshape(n), np.asarray(p0, dtype=float)])
    return integrate(ELVectorField(spec, L), s0, t0, t1, dt, method,
                     {"x": slice(0, n), "p": slice(n, n + m)})


def energy_along(spec, H, traj: Trajectory, block="xi") -> np.ndarray:
    Hf = hamiltonian(H, spec.n, spec.m)
    X, XI = traj["x"], traj[block]
    return np.array([float(Hf.jet(X[k], XI[k]).value) for k in range(len(traj))])


# -- Livens-type variational principle -------------------------------------------


def livens_lagrangian(H, pt: MixedPoint) -> float:
    """L_H(x, y, xi) = <y, xi> - H(x, xi)."""
    Hf = hamiltonian(H, pt.x.size, pt.xi.size)
    return float(pt.y @ pt.xi - Hf.jet(pt.x, pt.xi).value)


def hamiltonian_lift(spec, H, dual_traj: Trajectory) -> Trajectory:
    """(x, xi) -> (x, dH/dxi(x, xi), xi) node by node."""
    Hf = hamiltonian(H, spec.n, spec.m)
    X, XI = dual_traj["x"], dual_traj["xi"]
    Y = np.array([Hf.jet(X[k], XI[k], order=1).dv for k in range(len(dual_traj))]).reshape(
        len(dual_traj), spec.m)
    return Trajectory.from_blocks(dual_traj.t, x=X, y=Y, xi=XI)


def livens_residuals(spec, H, gamma_F: Trajectory):
    """Node-wise coefficients of f and h in the first-variation integrand:
    R_f = -xidot - sigma^T H_x + xi_k c^k_ij y^i,  R_h = y - H_xi."""
    Hf = hamiltonian(H, spec.n, spec.m)
    t = gamma_F.t
    X, Y, XI = gamma_F["x"], gamma_F["y"], gamma_F["xi"]
    xidot = time_derivative(XI, t)
    Rf = np.empty_like(Y)
    Rh = np.empty_like(Y)
    for k in range(len(t)):
        jet = Hf.jet(X[k], XI[k], order=1)
        _, sigma, c = spec.structure(X[k])
        Rf[k] = -xidot[k] - sigma.T @ jet.dx + Y[k] @ contract_first(XI[k], c)
        Rh[k] = Y[k] - jet.dv
    return Rf, Rh


def first_variation(spec, H, gamma_F: Trajectory, gen: VariationGenerator, residuals=None) -> float:
    """Simpson quadrature of  f^j R_f,j + h_k R_h^k  (endpoint term dropped)."""
    if not gen.endpoint_flag:
        raise PreconditionViolated("variation generator must vanish at the end points")
    Rf, Rh = livens_residuals(spec, H, gamma_F) if residuals is None else residuals
    t = gamma_F.t
    integrand = np.sum(_sample(gen.f, t, spec.m) * Rf, axis=1) + np.sum(
        _sample(gen.h, t, spec.m) * Rh, axis=1)
    return float(simpson(integrand, x=t))


def perturb_bump(traj: Trajectory, amplitude=0.1, block="xi", window=(0.25, 0.75)) -> Trajectory:
    """Add ``amplitude * sin^2`` bump supported on the given fraction of the
    time span to every component of ``block``."""
    t = traj.t
    a = t[0] + window[0] * (t[-1] - t[0])
    b = t[0] + window[1] * (t[-1] - t[0])
    s = np.clip((t - a) / (b - a), 0.0, 1.0)
    bump = amplitude * np.sin(np.pi * s) ** 2
    return traj.with_block(block, traj[block] + bump[:, None])
