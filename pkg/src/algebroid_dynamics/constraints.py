"""Hamiltonian dynamics constrained to a subbundle D of E.

D is described implicitly by functions Phi^s(x, y) (r of them) and/or by a
frame of sections d_alpha(x) (columns of an m x d matrix).  Both regimes keep
y = dH/dxi on D:

    nonholonomic:  xidot_j = xi_k c^k_ij H_{xi_i} - sigma^a_j H_{x^a}
                             + mu_s Phi^s_{y^j}(x, H_xi)
    vaconomic:     d/dt (xi_j + mu_s Phi^s_{y^j})
                       = (xi_k + mu_s Phi^s_{y^k}) c^k_ij H_{xi_i}
                         - sigma^a_j (H_{x^a} - mu_s Phi^s_{x^a})

Multipliers come from one time-differentiation of Phi^s(x, H_xi(x, xi)) = 0;
initial data are projected onto the constraint, drift is monitored, not
stabilised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algebroid import AlgebroidSpec, DualPoint, as_expr, x_names, xi_names
from .errors import (
    DegenerateConstraint,
    DegenerateFrame,
    DegenerateVaconomic,
    DimensionMismatch,
    InvariantViolation,
    NoConvergence,
)
from .expr import compile_program, parse, render
from .fiber import FiberJet, FiberMap, hamiltonian, lagrangian
from .mechanics import (
    Trajectory,
    contract_first,
    ill_conditioned,
    solve_checked,
    _sample,
    hamilton_field_at,
    integrate,
    integrate_hamilton,
    legendre_solve,
    time_derivative,
)

CHECK_TOL = 1e-9


class ConstraintSpec:
    """Implicit functions ``phi`` (in x, y) and/or a spanning ``frame`` of
    x-expressions (m rows, d columns) for a subbundle D of E."""

    def __init__(self, n, m, phi=(), frame=None, linear=False):
        self.n, self.m = n, m
        self.phi = FiberMap(list(phi), n, m, "y")
        self.r = len(self.phi)
        self.linear = bool(linear)
        self.xvars = x_names(n)
        if frame is not None:
            frame = [list(row) for row in frame]
            if len(frame) != m or len({len(row) for row in frame}) > 1:
                raise DimensionMismatch(f"frame must have {m} rows of equal length")
            self.d = len(frame[0]) if frame else 0
            self.frame = tuple(tuple(as_expr(e, self.xvars) for e in row) for row in frame)
            flat = tuple(e for row in self.frame for e in row)
            self._frame0 = compile_program(flat, self.xvars, 0)
            self._frame1 = compile_program(flat, self.xvars, 1)
            if self.r and self.r + self.d != m:
                raise DimensionMismatch(
                    f"rank of D ({self.d}) plus number of constraints ({self.r}) must equal {m}")
        else:
            self.frame = None
            self.d = m - self.r

    @property
    def has_frame(self):
        return self.frame is not None

    def frame_at(self, x):
        return self._frame0(np.asarray(x, dtype=float)).reshape(self.m, self.d)

    def frame_jet(self, x):
        """F (m, d) and dF (m, d, n) with dF[i, alpha, a] = d_a d^i_alpha."""
        vals, grads = self._frame1(np.asarray(x, dtype=float))
        return vals.reshape(self.m, self.d), grads.reshape(self.m, self.d, self.n)

    def __call__(self, x, y, order=0) -> FiberJet:
        return self.phi(x, y, order)


@dataclass
class MechanicalHamiltonian:
    """H(x, xi) = 1/2 xi^T ginv(x) xi + V(x)."""

    n: int
    m: int
    ginv: tuple
    V: object
    expr: object = field(init=False)

    def __post_init__(self):
        xv = x_names(self.n)
        rows = [list(r) for r in self.ginv]
        if len(rows) != self.m or any(len(r) != self.m for r in rows):
            raise DimensionMismatch(f"ginv must be {self.m}x{self.m}")
        self.ginv = tuple(tuple(as_expr(e, xv) for e in r) for r in rows)
        self.V = as_expr(self.V, xv)
        terms = [f"({render(self.ginv[i][j])})*xi{i + 1}*xi{j + 1}"
                 for i in range(self.m) for j in range(self.m)]
        text = f"0.5*({' + '.join(terms)}) + ({render(self.V)})"
        self.expr = parse(text, xv + xi_names(self.m))
        self._prog = compile_program(tuple(e for r in self.ginv for e in r), xv, 0)

    def ginv_at(self, x):
        return self._prog(np.asarray(x, dtype=float)).reshape(self.m, self.m)


def validate_constraint(spec: AlgebroidSpec, con: ConstraintSpec, tol=CHECK_TOL):
    """Raise InvariantViolation naming the first failing check."""
    rng = np.random.default_rng(1)
    for x in spec.sample_points():
        F = con.frame_at(x) if con.has_frame else None
        if con.r and F is not None:
            for alpha in range(con.d):
                val = np.max(np.abs(con(x, F[:, alpha]).value))
                if val > tol:
                    raise InvariantViolation(
                        f"frame column {alpha + 1} leaves D at x={x.tolist()} (|phi|={val:.2e})")
        if con.r:
            y = F @ rng.normal(size=con.d) if F is not None else np.zeros(con.m)
            jac = con(x, y, order=1).dv
            smin = np.linalg.svd(jac, compute_uv=False).min()
            if smin <= tol:
                raise InvariantViolation(
                    f"dPhi/dy is rank deficient at x={x.tolist()} (smallest singular value {smin:.2e})")
            if con.linear:
                y = rng.normal(size=con.m)
                base = con(x, y).value
                for lam in (2.0, 3.0):
                    dev = np.max(np.abs(con(x, lam * y).value - lam * base))
                    if dev > tol * max(1.0, np.max(np.abs(base))):
                        raise InvariantViolation(
                            f"constraints declared linear but phi(x, {lam:g} y) != {lam:g} phi(x, y)")
        if F is not None and con.d and np.linalg.matrix_rank(F, tol=tol) < con.d:
            raise InvariantViolation(f"frame columns are dependent at x={x.tolist()}")


def validate_metric(spec: AlgebroidSpec, mech: MechanicalHamiltonian, tol=CHECK_TOL):
    for x in spec.sample_points():
        gi = mech.ginv_at(x)
        if np.max(np.abs(gi - gi.T)) > tol:
            raise InvariantViolation(f"ginv is not symmetric at x={x.tolist()}")
        try:
            np.linalg.cholesky(gi)
        except np.linalg.LinAlgError:
            raise InvariantViolation(f"ginv is not positive definite at x={x.tolist()}") from None


# -- nonholonomic ----------------------------------------------------------------



def _nh_core(spec, Hf, con, x, xi):
    hj = Hf.jet(x, xi, order=2)
    rho, sigma, c = spec.structure(x)
    xdot, xidot = hamilton_field_at(rho, sigma, c, xi, hj.dx, hj.dv)
    if con.r == 0:
        return xdot, xidot, np.zeros(0)
    pj = con(x, hj.dv, order=1)
    omega_dot = hj.dvx @ xdot + hj.dvv @ xidot
    A = pj.dv @ hj.dvv @ pj.dv.T
    b = -(pj.dx @ xdot + pj.dv @ omega_dot)
    mu = solve_checked(A, b, DegenerateConstraint, "nonholonomic multiplier matrix")
    return xdot, xidot + pj.dv.T @ mu, mu


def nh_constraint_residual(spec, H, con: ConstraintSpec, pt: DualPoint) -> np.ndarray:
    Hf = hamiltonian(H, spec.n, spec.m)
    return con(pt.x, Hf.jet(pt.x, pt.xi, order=1).dv).value


def nh_multipliers(spec, H, con: ConstraintSpec, pt: DualPoint) -> np.ndarray:
    return _nh_core(spec, hamiltonian(H, spec.n, spec.m), con, pt.x, pt.xi)[2]


def nh_rhs(spec, H, con: ConstraintSpec, pt: DualPoint):
    """(xdot, xidot, mu)."""
    return _nh_core(spec, hamiltonian(H, spec.n, spec.m), con, pt.x, pt.xi)


class NHVectorField:
    def __init__(self, spec, H, con):
        self.spec, self.con = spec, con
        self.Hf = hamiltonian(H, spec.n, spec.m)

    def __call__(self, t, s):
        n = self.spec.n
        xdot, xidot, _ = _nh_core(self.spec, self.Hf, self.con, s[:n], s[n:])
        return np.concatenate([xdot, xidot])


def nh_project_initial(spec, H, con: ConstraintSpec, pt: DualPoint, tol=1e-12, max_iter=50) -> DualPoint:
    """Move xi along the span of dPhi/dy^T (x fixed) until the constraint holds."""
    if con.r == 0:
        return pt
    Hf = hamiltonian(H, spec.n, spec.m)
    x, xi0 = pt.x, pt.xi
    B = None
    lam = np.zeros(con.r)
    xi = xi0
    for _ in range(max_iter):
        hj = Hf.jet(x, xi, order=2)
        pj = con(x, hj.dv, order=1)
        res = pj.value
        if np.max(np.abs(res)) <= tol:
            return pt if xi is xi0 else DualPoint(x, xi)
        if B is None:
            B = pj.dv.copy()
        J = pj.dv @ hj.dvv @ B.T
        lam = lam - solve_checked(J, res, DegenerateConstraint, "constraint projection Jacobian")
        xi = xi0 + B.T @ lam
    raise NoConvergence(f"initial projection did not converge in {max_iter} iterations")


def _traj_multipliers(fn, traj, n, block="xi"):
    X, XI = traj["x"], traj[block]
    return np.array([fn(X[k], XI[k]) for k in range(len(traj))]).reshape(len(traj), -1)


def integrate_nonholonomic(spec, H, con, x0, xi0, t0, t1, dt, method="rk4", project=True) -> Trajectory:
    Hf = hamiltonian(H, spec.n, spec.m)
    pt = DualPoint(np.asarray(x0, dtype=float).reshape(spec.n), xi0)
    if project:
        pt = nh_project_initial(spec, Hf, con, pt)
    s0 = np.concatenate([pt.x, pt.xi])
    traj = integrate(NHVectorField(spec, Hf, con), s0, t0, t1, dt, method,
                     {"x": slice(0, spec.n), "xi": slice(spec.n, spec.n + spec.m)})
    traj.multipliers = _traj_multipliers(lambda x, xi: _nh_core(spec, Hf, con, x, xi)[2],
                                         traj, spec.n)
    return traj


def constraint_drift(spec, H, con, traj: Trajectory, block="xi") -> float:
    if con.r == 0:
        return 0.0
    Hf = hamiltonian(H, spec.n, spec.m)
    X, XI = traj["x"], traj[block]
    return float(max(np.max(np.abs(con(X[k], Hf.jet(X[k], XI[k], order=1).dv).value))
                     for k in range(len(traj))))


# -- geometric (tangency) characterisation ------------------------------------------


def tangency_residual(spec, H, con: ConstraintSpec, dual_traj: Trajectory,
                      include_constraint=True) -> float:
    """Distance between T(i* gamma) (finite differences) and T i* X_H(gamma).

    The tangency alone characterises the multiplier equations; with
    ``include_constraint`` the constraint residual |Phi(x, H_xi)| is folded
    in so that the check characterises the full nonholonomic system."""
    if not con.has_frame:
        raise ValueError("tangency check needs a frame for D")
    Hf = hamiltonian(H, spec.n, spec.m)
    t, X, XI = dual_traj.t, dual_traj["x"], dual_traj["xi"]
    N = len(t)
    eta = np.empty((N, con.d))
    push_x = np.empty_like(X)
    push_eta = np.empty((N, con.d))
    phi_worst = 0.0
    for k in range(N):
        F, dF = con.frame_jet(X[k])
        hj = Hf.jet(X[k], XI[k], order=1)
        rho, sigma, c = spec.structure(X[k])
        xdot, xidot = hamilton_field_at(rho, sigma, c, XI[k], hj.dx, hj.dv)
        eta[k] = F.T @ XI[k]
        push_x[k] = xdot
        push_eta[k] = np.einsum("ida,a,i->d", dF, xdot, XI[k]) + F.T @ xidot
        if include_constraint and con.r:
            phi_worst = max(phi_worst, float(np.max(np.abs(con(X[k], hj.dv).value))))
    base = np.max(np.abs(time_derivative(X, t) - push_x), initial=0.0)
    fibre = np.max(np.abs(time_derivative(eta, t) - push_eta), initial=0.0)
    return float(max(base, fibre, phi_worst))


# -- vaconomic ----------------------------------------------------------------------


def _vac_core(spec, Hf, con, x, xi, mu, full=False):
    m, r = spec.m, con.r
    hj = Hf.jet(x, xi, order=2)
    rho, sigma, c = spec.structure(x)
    omega = hj.dv
    xdot = rho @ omega
    if r == 0:
        _, xidot = hamilton_field_at(rho, sigma, c, xi, hj.dx, omega)
        return (xdot, xidot, np.zeros(0)) if not full else (xdot, xidot, np.zeros(0), xidot, None)
    pj = con(x, omega, order=2)
    momentum = xi + pj.dv.T @ mu
    target = omega @ contract_first(momentum, c) - sigma.T @ (hj.dx - pj.dx.T @ mu)
    Myy = np.tensordot(mu, pj.dvv, axes=(0, 0))
    Myx = np.tensordot(mu, pj.dvx, axes=(0, 0))
    drift = Myx @ xdot + Myy @ (hj.dvx @ xdot)
    K = np.zeros((m + r, m + r))
    K[:m, :m] = np.eye(m) + Myy @ hj.dvv
    K[:m, m:] = pj.dv.T
    K[m:, :m] = pj.dv @ hj.dvv
    rhs = np.concatenate([target - drift, -(pj.dx @ xdot + pj.dv @ (hj.dvx @ xdot))])
    sol = solve_checked(K, rhs, DegenerateVaconomic, "vaconomic system")
    xidot, mudot = sol[:m], sol[m:]
    if not full:
        return xdot, xidot, mudot
    momentum_dot = xidot + pj.dv.T @ mudot + drift + Myy @ hj.dvv @ xidot
    return xdot, xidot, mudot, momentum_dot, target


def vac_rhs(spec, H, con: ConstraintSpec, x, xi, mu):
    """(xdot, xidot, mudot)."""
    Hf = hamiltonian(H, spec.n, spec.m)
    return _vac_core(spec, Hf, con, np.asarray(x, float), np.asarray(xi, float), np.asarray(mu, float))


class VacVectorField:
    def __init__(self, spec, H, con):
        self.spec, self.con = spec, con
        self.Hf = hamiltonian(H, spec.n, spec.m)

    def __call__(self, t, s):
        n, m = self.spec.n, self.spec.m
        xdot, xidot, mudot = _vac_core(self.spec, self.Hf, self.con, s[:n], s[n:n + m], s[n + m:])
        return np.concatenate([xdot, xidot, mudot])


def integrate_vaconomic(spec, H, con, x0, xi0, mu0, t0, t1, dt, method="rk4", project=True) -> Trajectory:
    n, m, r = spec.n, spec.m, con.r
    Hf = hamiltonian(H, n, m)
    pt = DualPoint(np.asarray(x0, dtype=float).reshape(n), xi0)
    if project:
        pt = nh_project_initial(spec, Hf, con, pt)
    mu0 = np.zeros(r) if mu0 is None else np.asarray(mu0, dtype=float).reshape(r)
    s0 = np.concatenate([pt.x, pt.xi, mu0])
    traj = integrate(VacVectorField(spec, Hf, con), s0, t0, t1, dt, method,
                     {"x": slice(0, n), "xi": slice(n, n + m), "mu": slice(n + m, n + m + r)})
    traj.multipliers = traj["mu"].copy()
    return traj


def vac_momentum_residual(spec, H, con, traj: Trajectory, finite_differences=False) -> float:
    """How well pi_j = xi_j + mu_s Phi^s_{y^j} follows the vaconomic momentum
    equation along a trajectory with blocks x, xi, mu.

    By default d(pi)/dt is rebuilt by the chain rule from the solved
    (xidot, mudot); with ``finite_differences`` it is differentiated
    numerically from the stored trajectory instead."""
    Hf = hamiltonian(H, spec.n, spec.m)
    X, XI, MU, t = traj["x"], traj["xi"], traj["mu"], traj.t
    pis, pidots, targets = [], [], []
    for k in range(len(t)):
        _, _, _, pidot, target = _vac_core(spec, Hf, con, X[k], XI[k], MU[k], full=True)
        omega = Hf.jet(X[k], XI[k], order=1).dv
        pis.append(XI[k] + (con(X[k], omega, order=1).dv.T @ MU[k] if con.r else 0.0))
        pidots.append(pidot)
        targets.append(pidot if target is None else target)
    pidots = time_derivative(np.array(pis), t) if finite_differences else np.array(pidots)
    return float(np.max(np.abs(pidots - np.array(targets)), initial=0.0))


# -- Lagrange-d'Alembert (Euler-Lagrange side) ---------------------------------------


class LDVectorField:
    """Nonholonomic Euler-Lagrange equations in momentum form, state (x, p):

        pdot_i = sigma^a_i L_{x^a} + c^k_ji y^j L_{y^k} + lambda_s Phi^s_{y^i}(x, y)

    with y the inverse Legendre image of p and lambda from d/dt Phi(x, y) = 0.
    """

    def __init__(self, spec, L, con):
        self.spec, self.con = spec, con
        self.Lf = lagrangian(L, spec.n, spec.m)
        self.y = np.zeros(spec.m)

    def evaluate(self, x, p):
        y, lj = legendre_solve(self.Lf, x, p, self.y)
        self.y = y
        rho, sigma, c = self.spec.structure(x)
        xdot = rho @ y
        pdot = sigma.T @ lj.dx + y @ contract_first(lj.dv, c)
        if self.con.r == 0:
            return xdot, pdot, y, np.zeros(0)
        pj = self.con(x, y, order=1)
        Linv_phi = np.linalg.solve(lj.dvv, pj.dv.T)  # L_yy^-1 Phi_y^T
        A = pj.dv @ Linv_phi
        b = -(pj.dx @ xdot + pj.dv @ np.linalg.solve(lj.dvv, pdot - lj.dvx @ xdot))
        lam = solve_checked(A, b, DegenerateConstraint, "Lagrange-d'Alembert multiplier matrix")
        return xdot, pdot + pj.dv.T @ lam, y, lam

    def __call__(self, t, s):
        n = self.spec.n
        xdot, pdot, _, _ = self.evaluate(s[:n], s[n:])
        return np.concatenate([xdot, pdot])


def ld_rhs(spec, L, con, x, p, y_guess=None):
    """(xdot, pdot, y, lambda)."""
    field_ = LDVectorField(spec, L, con)
    if y_guess is not None:
        field_.y = np.asarray(y_guess, dtype=float)
    return field_.evaluate(np.asarray(x, float), np.asarray(p, float))


def integrate_lagrange_dalembert(spec, L, con, x0, p0, t0, t1, dt, method="rk4") -> Trajectory:
    n, m = spec.n, spec.m
    fld = LDVectorField(spec, L, con)
    s0 = np.concatenate([np.asarray(x0, dtype=float).reshape(n), np.asarray(p0, dtype=float)])
    traj = integrate(fld, s0, t0, t1, dt, method, {"x": slice(0, n), "p": slice(n, n + m)})
    traj.multipliers = _traj_multipliers(lambda x, p: fld.evaluate(x, p)[3], traj, n, "p")
    return traj


# -- nonholonomic reduction ----------------------------------------------------------


class ReducedAlgebroid:
    """Algebroid structure on D from the metric projector P onto D:
    [.,.]_D = P[.,.], rho_D = rho|_D, sigma_D = sigma|_D, in the frame basis."""

    def __init__(self, spec: AlgebroidSpec, con: ConstraintSpec, mech: MechanicalHamiltonian):
        if not con.has_frame:
            raise ValueError("reduction needs a frame for D")
        self.base, self.con, self.mech = spec, con, mech
        self.n, self.m = spec.n, con.d
        self.name = f"{spec.name or 'algebroid'}/D"
        self._memo = (None, None)

    def frame_data(self, x):
        """F, dF, gF = g F, and the coefficient map Q = G^-1 F^T g."""
        key = np.asarray(x, dtype=float).tobytes()
        if self._memo[0] == key:
            return self._memo[1]
        F, dF = self.con.frame_jet(x)
        gF = np.linalg.solve(self.mech.ginv_at(x), F)
        G = F.T @ gF
        if ill_conditioned(G):
            err = DegenerateFrame(f"frame Gram matrix is singular at x={np.asarray(x).tolist()}")
            raise err
        Q = np.linalg.solve(G, gF.T)
        self._memo = (key, (F, dF, gF, G, Q))
        return F, dF, gF, G, Q

    def projector(self, x):
        F, _, _, _, Q = self.frame_data(x)
        return F @ Q

    def structure(self, x):
        rho, sigma, c = self.base.structure(x)
        F, dF, _, _, Q = self.frame_data(x)
        rho_D, sigma_D = rho @ F, sigma @ F
        B = (np.einsum("kij,ia,jb->kab", c, F, F)
             + np.einsum("xa,kbx->kab", rho_D, dF)
             - np.einsum("xb,kax->kab", sigma_D, dF))
        return rho_D, sigma_D, np.einsum("gk,kab->gab", Q, B)


class ReducedHamiltonian:
    """H_D(x, eta) = H(x, j(x, eta)), where j(eta) is the covector with
    F^T j = eta that annihilates the metric complement of D."""

    def __init__(self, reduced: ReducedAlgebroid):
        self.reduced = reduced
        self.Hf = hamiltonian(reduced.mech.expr, reduced.n, reduced.base.m)

    def lift(self, x, eta):
        F, dF, gF, G, _ = self.reduced.frame_data(x)
        a = np.linalg.solve(G, eta)
        return gF @ a, a, dF

    def jet(self, x, eta, order=1):
        j, a, dF = self.lift(x, eta)
        if order == 0:
            return FiberJet(self.Hf.jet(x, j).value)
        if order > 1:
            raise NotImplementedError("reduced Hamiltonian provides first derivatives only")
        hj = self.Hf.jet(x, j, order=1)
        dx = hj.dx - np.einsum("i,ida,d->a", j, dF, a)
        return FiberJet(hj.value, dx, a)


def reduce(spec: AlgebroidSpec, con: ConstraintSpec, mech: MechanicalHamiltonian):
    red = ReducedAlgebroid(spec, con, mech)
    return red, ReducedHamiltonian(red)


def integrate_reduced(red: ReducedAlgebroid, Hred: ReducedHamiltonian, x0, eta0,
                      t0, t1, dt, method="rk4") -> Trajectory:
    traj = integrate_hamilton(red, Hred, x0, eta0, t0, t1, dt, method)
    traj.layout = {"x": traj.layout["x"], "eta": traj.layout["xi"]}
    return traj


def restrict_to_D(con: ConstraintSpec, traj: Trajectory) -> np.ndarray:
    """i* applied node-wise: eta_alpha = d^i_alpha(x) xi_i."""
    X, XI = traj["x"], traj["xi"]
    return np.array([con.frame_at(X[k]).T @ XI[k] for k in range(len(traj))]).reshape(
        len(traj), con.d)


# -- variation classes ------------------------------------------------------------------


def vaconomic_variation_defect(spec, con, gamma: Trajectory, b, bdot=None) -> float:
    """max_t |<dPhi, delta_b gamma>| along an E-path with blocks x, y."""
    t = gamma.t
    B = _sample(b, t, spec.m)
    Bdot = time_derivative(B, t) if bdot is None else _sample(bdot, t, spec.m)
    X, Y = gamma["x"], gamma["y"]
    worst = 0.0
    for k in range(len(t)):
        _, sigma, c = spec.structure(X[k])
        dx = sigma @ B[k]
        dy = Bdot[k] + np.einsum("kij,i,j->k", c, Y[k], B[k])
        pj = con(X[k], Y[k], order=1)
        worst = max(worst, float(np.max(np.abs(pj.dx @ dx + pj.dv @ dy), initial=0.0)))
    return worst


def vaconomic_variation_class_check(spec, con, gamma, b, bdot=None, tol=1e-8) -> bool:
    """Whether delta_b gamma stays tangent to D at every node."""
    return vaconomic_variation_defect(spec, con, gamma, b, bdot) <= tol
