import math

import numpy as np
import pytest

from algebroid_dynamics.algebroid import AlgebroidSpec, DualPoint, EPoint
from algebroid_dynamics.errors import (
    DomainError,
    GridTooCoarse,
    NoConvergence,
    NonFiniteState,
    PreconditionViolated,
    SingularLegendre,
)
from algebroid_dynamics.expr import parse
from algebroid_dynamics.fiber import lagrangian
from algebroid_dynamics.mechanics import (
    MixedPoint,
    Trajectory,
    VariationGenerator,
    admissibility_residual,
    el_rhs,
    el_tangent_prolongation_residual,
    energy_along,
    first_variation,
    hamilton_rhs,
    hamiltonian_lift,
    integrate,
    integrate_hamilton,
    integrate_lagrange,
    lambda_L,
    Lambda_L,
    legendre_solve,
    livens_lagrangian,
    perturb_bump,
    random_generator,
    time_derivative,
    time_grid,
    variation_from_b,
    zero_generator,
)

from oracles import euler_top_rhs, so3_c

TM1 = AlgebroidSpec(1, 1, rho=[[1]])
TM2 = AlgebroidSpec(2, 2, rho=[[1, 0], [0, 1]])
SO3 = AlgebroidSpec(0, 3, c=so3_c())
TOP_H = "0.5*(xi1^2 + xi2^2/2 + xi3^2/3)"
TOP_L = "0.5*(y1^2 + 2*y2^2 + 3*y3^2)"


def test_points_reject_non_finite():
    with pytest.raises(ValueError):
        MixedPoint([0.0], [np.nan], [1.0])
    with pytest.raises(ValueError):
        DualPoint([np.inf], [0.0])


def test_trajectory_blocks_and_grid():
    t = np.linspace(0, 1, 5)
    tr = Trajectory.from_blocks(t, x=np.zeros((5, 0)), xi=np.ones((5, 3)))
    assert tr["x"].shape == (5, 0) and tr["xi"].shape == (5, 3)
    assert tr.uniform
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0, 1.0]), np.zeros((3, 1)), {"s": slice(0, 1)})


def test_time_grid():
    g = time_grid(0.0, 1.0, 0.1)
    assert len(g) == 11 and g[-1] == 1.0
    g = time_grid(0.0, 1.0, 0.3)
    assert g[-1] == 1.0 and len(g) == 5
    with pytest.raises(ValueError, match="dt must be positive"):
        time_grid(0, 1, 0)


def test_integrate_exponential_decay():
    tr = integrate(lambda t, s: -s, [1.0], 0.0, 1.0, 1e-2, "rk4")
    assert abs(tr.states[-1, 0] - math.exp(-1)) <= 1e-9
    assert len(tr.t) == len(tr.states) == 101


def test_integrate_constant_is_exact():
    tr = integrate(lambda t, s: np.zeros_like(s), [0.1, -3.0], 0.0, 2.0, 0.1)
    assert np.all(tr.states == [0.1, -3.0])


@pytest.mark.parametrize("method, order", [("euler", 1), ("heun", 2), ("rk4", 4)])
def test_integrator_orders(method, order):
    errs = [abs(integrate(lambda t, s: np.array([s[0] * math.cos(t)]), [1.0], 0.0, 1.0, dt, method).states[-1, 0]
                - math.exp(math.sin(1.0))) for dt in (0.02, 0.01)]
    assert abs(math.log2(errs[0] / errs[1]) - order) < 0.2


def test_integration_errors_carry_time():
    def rhs(t, s):
        if t >= 0.5:
            raise DomainError("boom")
        return s

    with pytest.raises(DomainError) as info:
        integrate(rhs, [1.0], 0.0, 1.0, 0.1)
    assert abs(info.value.time - 0.5) < 1e-9
    assert "t=0.5" in str(info.value)
    with pytest.raises(NonFiniteState) as info, np.errstate(over="ignore"):
        integrate(lambda t, s: s * s, [1.0], 0.0, 5.0, 0.1)
    assert info.value.time is not None


def test_time_derivative_second_order_and_grid_check():
    t = np.linspace(0, 1, 201)
    d = time_derivative(np.sin(t)[:, None], t)
    assert np.max(np.abs(d[:, 0] - np.cos(t))) < 1e-4
    with pytest.raises(GridTooCoarse):
        time_derivative(np.zeros((2, 1)), np.array([0.0, 1.0]))


def test_variation_generators():
    gen = random_generator(3, 0.0, 2.0, np.random.default_rng(1))
    assert np.max(np.abs(gen.f(np.array([0.0, 2.0])))) <= 1e-14
    t = np.linspace(0, 2, 2001)
    fd = time_derivative(gen.f(t), t)
    assert np.max(np.abs(fd - gen.fdot(t))) < 1e-4
    with pytest.raises(ValueError):
        VariationGenerator(lambda t: np.ones((len(t), 1)), lambda t: np.zeros((len(t), 1)), 0.0, 1.0, True)


def test_admissibility_residual():
    t = np.arange(0, 1 + 1e-12, 1e-3)
    good = Trajectory.from_blocks(t, x=np.sin(t), y=np.cos(t))
    bad = Trajectory.from_blocks(t, x=np.sin(t), y=2 * np.cos(t))
    assert admissibility_residual(TM1, good) <= 1e-6
    assert 0.5 < admissibility_residual(TM1, bad) < 2.0
    top = Trajectory.from_blocks(t, x=np.zeros((len(t), 0)), y=np.ones((len(t), 3)))
    assert admissibility_residual(SO3, top) == 0.0


def test_variation_from_b():
    t = np.linspace(0, 1, 101)
    gamma = Trajectory.from_blocks(t, x=np.sin(t), y=np.cos(t))
    var = variation_from_b(TM1, gamma, lambda s: np.sin(3 * s)[:, None], lambda s: 3 * np.cos(3 * s)[:, None])
    assert np.array_equal(var["dx"][:, 0], np.sin(3 * t))
    assert np.array_equal(var["dy"][:, 0], 3 * np.cos(3 * t))
    zero = variation_from_b(TM1, gamma, np.zeros((101, 1)))
    assert not np.any(zero["dx"]) and not np.any(zero["dy"])
    top = Trajectory.from_blocks(t, x=np.zeros((101, 0)), y=np.tile([1.0, 0, 0], (101, 1)))
    var = variation_from_b(SO3, top, np.tile([0.0, 1.0, 0.0], (101, 1)))
    np.testing.assert_array_equal(var["dy"][50], [0, 0, 1])


def test_legendre_maps():
    assert np.array_equal(lambda_L("0.5*(y1^2+y2^2)", EPoint([0.0, 0.0], [1.0, -2.0])).xi, [1.0, -2.0])
    L2 = parse("0.5*(y1^2 + 2*y2^2)", ["x1", "x2", "y1", "y2"])
    assert np.array_equal(lambda_L(L2, EPoint([0.0, 0.0], [1.0, 1.0])).xi, [1.0, 2.0])
    assert np.array_equal(lambda_L("x1^2", EPoint([3.0], [5.0])).xi, [0.0])
    w = Lambda_L(TM2, "0.5*(y1^2+y2^2) - x1^2*x2", EPoint([1.0, 2.0], [0.5, -1.0]))
    np.testing.assert_array_equal(np.concatenate([w.xi, w.xdot, w.xidot]), [0.5, -1, 0.5, -1, -4, -1])
    y = np.array([1.0, 0.5, -2.0])
    w = Lambda_L(SO3, TOP_L, EPoint([], y))
    np.testing.assert_allclose(w.xidot, np.cross(y * [1, 2, 3], y), atol=1e-15)
    w = Lambda_L(TM2, "0.5*(y1^2+y2^2)", EPoint([0.3, 0.3], [0.0, 0.0]))
    assert not np.any(np.concatenate([w.xi, w.xdot, w.xidot]))


def test_el_rhs_examples():
    L = "0.5*(y1^2+y2^2) - (0.5*x1^2 + 0.25*x2^4)"
    xdot, pdot, y = el_rhs(TM2, L, [0.3, -0.5], [1.0, 2.0], [0.0, 0.0])
    np.testing.assert_allclose(xdot, [1.0, 2.0])
    np.testing.assert_allclose(pdot, [-0.3, 0.125], rtol=1e-14)
    p = np.array([1.0, -0.5, 2.0])
    xdot, pdot, y = el_rhs(SO3, TOP_L, [], p, np.zeros(3))
    np.testing.assert_allclose(y, p / [1, 2, 3], rtol=1e-14)
    np.testing.assert_allclose(pdot, euler_top_rhs(p), atol=1e-14)
    _, pdot, y = el_rhs(SO3, "0.5*(y1^2+y2^2+y3^2)", [], np.zeros(3), np.ones(3))
    assert not np.any(y) and not np.any(pdot)


def test_legendre_failures():
    with pytest.raises(SingularLegendre):
        el_rhs(TM1, "x1*y1", [1.0], [2.0], [0.0])
    Lf = lagrangian("y1^4/4 + y1^2/2", 1, 1)
    with pytest.raises(NoConvergence):
        legendre_solve(Lf, np.zeros(1), np.array([50.0]), np.zeros(1), max_iter=2)
    y, _ = legendre_solve(Lf, np.zeros(1), np.array([50.0]), np.zeros(1))
    assert abs(y[0] ** 3 + y[0] - 50.0) <= 1e-10


def test_el_tangent_prolongation():
    L = "0.5*(y1^2 + 2*y2^2 + 3*y3^2)"
    tr = integrate_lagrange(SO3, L, [], [0.0, 1.0, 1.0], 0.0, 2.0, 1e-3)
    Y = tr["p"] / [1, 2, 3]
    gamma = Trajectory.from_blocks(tr.t, x=tr["x"], y=Y)
    assert el_tangent_prolongation_residual(SO3, L, gamma) <= 1e-5
    t = tr.t
    still = Trajectory.from_blocks(t, x=np.zeros((len(t), 0)), y=np.tile([0.0, 1.0, 1.0], (len(t), 1)))
    assert el_tangent_prolongation_residual(SO3, L, still) > 0.1
    rest = Trajectory.from_blocks(t, x=np.zeros((len(t), 0)), y=np.tile([0.7, 0.0, 0.0], (len(t), 1)))
    assert el_tangent_prolongation_residual(SO3, L, rest) <= 1e-9


def test_hamilton_rhs_examples():
    H = "0.5*(xi1^2+xi2^2) + x1*x2^2"
    xdot, xidot = hamilton_rhs(TM2, H, DualPoint([1.0, 2.0], [3.0, -1.0]))
    np.testing.assert_array_equal(xdot, [3.0, -1.0])
    np.testing.assert_array_equal(xidot, [-4.0, -4.0])
    _, xidot = hamilton_rhs(SO3, TOP_H, DualPoint([], [0.0, 1.0, 1.0]))
    np.testing.assert_allclose(xidot, [-1 / 6, 0, 0], rtol=1e-15)
    _, xidot = hamilton_rhs(SO3, TOP_H, DualPoint([], [1.0, 0.0, 0.0]))
    assert not np.any(xidot)


def test_energy_conserved_on_skew_x_dependent_spec():
    c = [[[0, "x1"], ["-x1", 0]], [[0, "cos(x2)"], ["-cos(x2)", 0]]]
    spec = AlgebroidSpec(2, 2, rho=[[1, "x2"], ["sin(x1)", 1]], c=c)
    H = "0.5*(xi1^2 + (1 + 0.5*x1^2)*xi2^2) + 0.1*x2^2"
    tr = integrate_hamilton(spec, H, [0.1, 0.2], [0.5, -0.3], 0.0, 10.0, 1e-3)
    E = energy_along(spec, H, tr)
    assert np.max(np.abs(E - E[0])) <= 1e-8


def test_el_and_hamilton_flows_agree():
    spec = AlgebroidSpec(3, 3, rho=[[0, "cos(x3)", "-sin(x3)"], [0, "sin(x3)", "cos(x3)"], [1, 0, 0]],
                         c=[[[0] * 3] * 3, [[0, 0, -1], [0, 0, 0], [1, 0, 0]], [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]])
    V = "0.05*(x1^2 + x2^2) + 0.1*cos(x3)"
    L = f"0.5*(y1^2 + 2*y2^2 + 2*y3^2) - ({V})"
    H = f"0.5*(xi1^2 + 0.5*xi2^2 + 0.5*xi3^2) + {V}"
    x0, p0 = [0.1, -0.2, 0.3], [0.5, 1.0, 0.25]
    a = integrate_lagrange(spec, L, x0, p0, 0.0, 5.0, 1e-3)
    b = integrate_hamilton(spec, H, x0, p0, 0.0, 5.0, 1e-3)
    assert np.max(np.abs(a.states - b.states)) <= 1e-8


def test_livens_lagrangian():
    assert livens_lagrangian("0", MixedPoint([0.0], [1.0, 1.0], [1.0, 1.0])) == 2.0
    H = "0.5*(xi1^2 + xi2^2) + x1"
    assert livens_lagrangian(H, MixedPoint([2.0], [0.0, 0.0], [1.0, 3.0])) == -7.0
    xi = np.array([0.3, -1.2])
    assert livens_lagrangian("0.5*(xi1^2 + xi2^2)", MixedPoint([0.0, 0.0], xi, xi)) == pytest.approx(0.5 * xi @ xi)


def test_hamiltonian_lift():
    t = np.linspace(0, 1, 4)
    dual = Trajectory.from_blocks(t, x=np.zeros((4, 0)), xi=np.ones((4, 3)))
    np.testing.assert_allclose(hamiltonian_lift(SO3, TOP_H, dual)["y"][0], [1, 0.5, 1 / 3], rtol=1e-15)
    np.testing.assert_array_equal(hamiltonian_lift(SO3, "0.5*(xi1^2+xi2^2+xi3^2)", dual)["y"], dual["xi"])
    assert not np.any(hamiltonian_lift(SO3, "1.5", dual)["y"])


def test_first_variation():
    tr = integrate_hamilton(SO3, TOP_H, [], [0.0, 1.0, 1.0], 0.0, 1.0, 1e-3)
    gamma = hamiltonian_lift(SO3, TOP_H, tr)
    assert first_variation(SO3, TOP_H, gamma, zero_generator(3, 0.0, 1.0)) == 0.0
    rng = np.random.default_rng(5)
    gens = [random_generator(3, 0.0, 1.0, rng) for _ in range(5)]
    assert max(abs(first_variation(SO3, TOP_H, gamma, g)) for g in gens) <= 1e-6
    bumped = perturb_bump(gamma, 0.1)
    assert max(abs(first_variation(SO3, TOP_H, bumped, g)) for g in gens) > 1e-2
    g = gens[0]
    loose = VariationGenerator(g.f, g.h, 0.0, 1.0, endpoint_flag=False)
    with pytest.raises(PreconditionViolated):
        first_variation(SO3, TOP_H, gamma, loose)
