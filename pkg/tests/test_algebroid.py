import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebroid_dynamics.algebroid import (
    AlgebroidSpec,
    CotangentDual,
    CotangentE,
    DualPoint,
    EPoint,
    almost_lie_residual,
    anchor_left,
    bracket_sections,
    classify,
    contract_pi,
    duality_residual,
    epsilon,
    jacobiator_residual,
    kappa_pair,
    pi_tensor,
    r_tau,
    r_tau_inverse,
    skew_residual,
)
from algebroid_dynamics.errors import DimensionMismatch, PreconditionViolated, UnknownVariable
from algebroid_dynamics.expr import parse
from algebroid_dynamics.mechanics import hamilton_rhs

from oracles import LEVI_CIVITA, random_structure, so3_c

TM2 = AlgebroidSpec(2, 2, rho=[[1, 0], [0, 1]])
SO3 = AlgebroidSpec(0, 3, c=so3_c())


def random_spec(seed, n, m, skew=False):
    rho, sigma, c = random_structure(np.random.default_rng(seed), n, m, skew)
    return AlgebroidSpec(n, m, rho=rho, sigma=sigma, c=c)


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        AlgebroidSpec(2, 2, rho=[[1, 0]])
    with pytest.raises(DimensionMismatch):
        AlgebroidSpec(0, 2, c=[[[0, 0], [0, 0]]])
    with pytest.raises(UnknownVariable):
        AlgebroidSpec(1, 1, rho=[["x2"]])


def test_anchor():
    np.testing.assert_array_equal(anchor_left(TM2, EPoint([0.3, 0.1], [2.0, -1.0])), [2.0, -1.0])
    assert anchor_left(SO3, EPoint([], [1, 2, 3])).shape == (0,)
    spec = random_spec(3, 2, 3)
    x, y = np.array([0.2, -0.4]), np.array([1.0, 0.5, -2.0])
    rho = np.array([[float(parse(e, ["x1", "x2"]).program(order=0)(x)[0]) for e in row]
                    for row in random_structure(np.random.default_rng(3), 2, 3)[0]])
    np.testing.assert_allclose(anchor_left(spec, EPoint(x, y)), rho @ y, rtol=1e-14)


def test_bracket_of_vector_fields():
    # classical [X, Y] with X = x2 d/dx1, Y = d/dx2 is -d/dx1
    for x in ([0.0, 0.0], [1.5, -0.3]):
        np.testing.assert_allclose(bracket_sections(TM2, ["x2", "0"], ["0", "1"], x), [-1.0, 0.0])


def test_bracket_of_constant_sections_on_lie_algebra():
    X, Y = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 3.0])
    got = bracket_sections(SO3, [repr(float(v)) for v in X], [repr(float(v)) for v in Y], [])
    np.testing.assert_allclose(got, np.cross(X, Y), atol=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_bracket_leibniz_rule(seed):
    spec = random_spec(seed, 2, 2)
    rng = np.random.default_rng(seed + 1)
    xv = ["x1", "x2"]
    X = ["sin(x1) + x2", "x1*x2"]
    Y = ["cos(x2)", "x1^2 - 1"]
    f, g = "exp(0.3*x1) + x2", "1 + x1*x2^2"
    fY = [f"({f})*({e})" for e in Y]
    gX = [f"({g})*({e})" for e in X]
    fe, ge = parse(f, xv), parse(g, xv)
    for x in rng.uniform(-1, 1, (100, 2)):
        rho, sigma, _ = spec.structure(x)
        fv, df = fe.program(order=1)(x)
        gv, dg = ge.program(order=1)(x)
        Xv = np.array([parse(e, xv).program(order=0)(x)[0] for e in X])
        Yv = np.array([parse(e, xv).program(order=0)(x)[0] for e in Y])
        rhs = (gv[0] * fv[0] * bracket_sections(spec, X, Y, x)
               + gv[0] * (df[0] @ (rho @ Xv)) * Yv - fv[0] * (dg[0] @ (sigma @ Yv)) * Xv)
        lhs = bracket_sections(spec, gX, fY, x)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * (1 + np.max(np.abs(rhs)))


def test_skew_residual():
    assert skew_residual(SO3) == 0.0
    assert skew_residual(TM2) == 0.0
    c = [[[1, 0], [0, 0]], [[0, 0], [0, 0]]]
    assert skew_residual(AlgebroidSpec(0, 2, c=c)) >= 2.0
    assert skew_residual(AlgebroidSpec(1, 1, rho=[[1]], sigma=[[2]])) == 1.0


def test_almost_lie_residual():
    assert almost_lie_residual(TM2) == 0.0
    assert almost_lie_residual(SO3) == 0.0
    assert almost_lie_residual(AlgebroidSpec(1, 1, rho=[["x1"]])) == 0.0
    companion = AlgebroidSpec(1, 1, rho=[["x1"]], c=[[[1]]])
    assert almost_lie_residual(companion) > 0.1


def test_jacobiator():
    assert jacobiator_residual(SO3) == 0.0
    assert jacobiator_residual(TM2) == 0.0
    # c^3_12 = x1 with rho_3 = d/dx1: rho(e1) c^3_23 ... cyclic sum picks up d c / dx1 = 1
    c = [[[0] * 3 for _ in range(3)] for _ in range(2)] + [[[0, "x1", 0], ["-x1", 0, 0], [0, 0, 0]]]
    spec = AlgebroidSpec(1, 3, rho=[[0, 0, 1]], c=c)
    assert jacobiator_residual(spec) > 0.1
    with pytest.raises(PreconditionViolated):
        jacobiator_residual(AlgebroidSpec(0, 1, c=[[[1]]]))


def test_jacobi_for_so3_by_nested_brackets():
    basis = np.eye(3)

    def br(u, v):
        return bracket_sections(SO3, [repr(float(a)) for a in u], [repr(float(a)) for a in v], [])

    worst = 0.0
    for i in range(3):
        for j in range(3):
            for k in range(3):
                a, b, c = basis[i], basis[j], basis[k]
                cyc = br(br(a, b), c) + br(br(b, c), a) + br(br(c, a), b)
                worst = max(worst, np.max(np.abs(cyc)))
    assert worst == 0.0


def test_classify():
    assert classify(SO3)["class"] == "Lie algebroid"
    assert classify(AlgebroidSpec(0, 1, c=[[[1]]]))["class"] == "general algebroid"
    assert classify(AlgebroidSpec(1, 1, rho=[["x1"]], c=[[[0]]]))["class"] == "Lie algebroid"


def test_pi_tensor_examples():
    P = pi_tensor(TM2, DualPoint([0.1, 0.2], [3.0, 4.0]))
    np.testing.assert_array_equal(P, [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]])
    P = pi_tensor(SO3, DualPoint([], [1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(P, LEVI_CIVITA[:, :, 0])
    np.testing.assert_array_equal(P, -P.T)
    assert pi_tensor(SO3, DualPoint([], [1, 2, 3])).shape == (3, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_pi_contraction_reproduces_hamilton_rhs(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(seed, 2, 2)
    H = parse("0.5*xi1^2 + x1*xi1*xi2 + sin(x2) + xi2^2", ["x1", "x2", "xi1", "xi2"])
    from algebroid_dynamics.fiber import hamiltonian
    Hf = hamiltonian(H, 2, 2)
    x, xi = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    jet = Hf.jet(x, xi, order=1)
    xdot, xidot = hamilton_rhs(spec, H, DualPoint(x, xi))
    got = contract_pi(pi_tensor(spec, DualPoint(x, xi)), jet.dv, jet.dx)
    np.testing.assert_allclose(got, np.concatenate([xidot, xdot]), rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_pi_is_linear_in_xi(seed, a, b):
    spec = random_spec(seed, 1, 3)
    rng = np.random.default_rng(seed)
    x, u, v = rng.uniform(-1, 1, 1), rng.normal(size=3), rng.normal(size=3)
    top = lambda xi: pi_tensor(spec, DualPoint(x, xi))[:3, :3]
    np.testing.assert_allclose(top(a * u + b * v), a * top(u) + b * top(v), atol=1e-12)


def test_epsilon_examples():
    v = CotangentE([0.5, 1.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0])
    w = epsilon(TM2, v)
    np.testing.assert_array_equal(w.xi, v.pi)
    np.testing.assert_array_equal(w.xdot, v.y)
    np.testing.assert_array_equal(w.xidot, v.p)
    y, xi = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -1.1])
    w = epsilon(SO3, CotangentE([], y, [], xi))
    np.testing.assert_allclose(w.xidot, np.cross(xi, y), atol=1e-15)
    w = epsilon(SO3, CotangentE([], y, [], np.zeros(3)))
    assert not np.any(w.xidot)


def test_r_tau():
    w = r_tau(CotangentE([1.0], [2.0], [3.0], [4.0]))
    assert (w.x[0], w.xi[0], w.p[0], w.phi[0]) == (1.0, 4.0, -3.0, 2.0)
    back = r_tau_inverse(w)
    assert (back.x[0], back.y[0], back.p[0], back.pi[0]) == (1.0, 2.0, 3.0, 4.0)
    z = r_tau(CotangentE([0.0], [0.0], [0.0], [0.0]))
    assert not np.any(np.concatenate([z.xi, z.p, z.phi]))
    w = CotangentDual([1.0], [2.0], [3.0], [4.0])
    again = r_tau(r_tau_inverse(w))
    assert (again.xi[0], again.p[0], again.phi[0]) == (2.0, 3.0, 4.0)


def test_kappa_examples():
    x, y, Y, Yd = [0.1, 0.2], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]
    v, vp = kappa_pair(TM2, x, y, Y, Yd)
    np.testing.assert_array_equal(np.concatenate([v.y, v.xdot, v.ydot]), [3, 4, 1, 2, 5, 6])
    np.testing.assert_array_equal(np.concatenate([vp.y, vp.xdot, vp.ydot]), [1, 2, 3, 4, 5, 6])
    _, vp = kappa_pair(SO3, [], [1, 0, 0], [0, 1, 0], [0, 0, 0])
    np.testing.assert_array_equal(vp.ydot, [0, 0, 1])
    _, vp = kappa_pair(SO3, [], [1, 2, 3], [0, 0, 0], [0, 0, 0])
    assert not np.any(vp.ydot)


def _duality_scale(x, y, Y, Yd, p, pi):
    return 1.0 + sum(float(np.sum(np.abs(a))) for a in (y, Y, Yd, p, pi)) ** 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["tm", "so3", "random", "random-skew"]))
def test_duality(seed, kind):
    rng = np.random.default_rng(seed)
    spec = {"tm": TM2, "so3": SO3}.get(kind) or random_spec(seed, 2, 3, skew=kind == "random-skew")
    n, m = spec.n, spec.m
    args = (rng.uniform(-1, 1, n),) + tuple(rng.normal(size=k) for k in (m, m, m, n, m))
    assert duality_residual(spec, *args) <= 1e-12 * _duality_scale(*args)


def test_duality_zero_fibres():
    assert duality_residual(SO3, [], np.zeros(3), np.zeros(3), np.zeros(3), [], np.zeros(3)) == 0.0


def test_sample_points_deterministic():
    spec = AlgebroidSpec(2, 1, sample_box=[(0, 1), (-2, 2)])
    a, b = spec.sample_points(), spec.sample_points()
    assert a.shape == (100, 2) and np.array_equal(a, b)
    assert np.all((a[:, 0] >= 0) & (a[:, 0] <= 1) & (a[:, 1] >= -2) & (a[:, 1] <= 2))
    assert SO3.sample_points().shape == (1, 0)
