import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebroid_dynamics.errors import DomainError, ExprSyntaxError, UnknownVariable
from algebroid_dynamics.expr import compile_program, constant, eval_jet2, evaluate, parse, render

from oracles import expr_function, expression_texts, fd_grad, fd_hess

X3 = ("x1", "x2", "x3")


def test_parse_collects_free_variables():
    e = parse("x1^2 + sin(x2)", ["x1", "x2"])
    assert e.free == {"x1", "x2"}
    assert parse("0.5*(xi1^2 + xi2^2/2)", ["xi1", "xi2"]).free == {"xi1", "xi2"}


def test_syntax_error_reports_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("y3 - ", ["y3"])
    assert info.value.position == 5


@pytest.mark.parametrize("text, pos", [("x1 +* 2", 5), ("(x1", 4), ("2 $ 3", 3), ("foo(x1)", 1), ("", 1)])
def test_syntax_error_positions(text, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text, ["x1"])
    assert info.value.position == pos


def test_unknown_variable_named():
    with pytest.raises(UnknownVariable) as info:
        parse("x1 + q", ["x1"])
    assert info.value.name == "q"
    assert info.value.position == 6


def test_precedence_and_associativity():
    env = {"x1": 2.0}
    assert evaluate(parse("-x1^2", ["x1"]), env) == -4.0
    assert evaluate(parse("2^3^2", []), {}) == 512.0
    assert evaluate(parse("2^-1", []), {}) == 0.5
    assert evaluate(parse("8/4/2", []), {}) == 1.0
    assert evaluate(parse("1 - 2 - 3", []), {}) == -4.0
    assert evaluate(parse("3 + 4*x1", ["x1"]), env) == 11.0


def test_evaluate_examples():
    assert evaluate(parse("x1^2+sin(x2)", ["x1", "x2"]), {"x1": 2, "x2": 0}) == 4.0
    assert evaluate(parse("exp(0)", []), {}) == 1.0


@pytest.mark.parametrize("text, env", [
    ("1/x1", {"x1": 0.0}),
    ("log(x1)", {"x1": -1.0}),
    ("log(x1)", {"x1": 0.0}),
    ("sqrt(x1)", {"x1": -0.5}),
    ("x1^0.5", {"x1": -2.0}),
    ("x1^-1", {"x1": 0.0}),
    ("exp(x1)", {"x1": 1e4}),
])
def test_domain_errors(text, env):
    with pytest.raises(DomainError):
        evaluate(parse(text, ["x1"]), env)


def test_evaluate_requires_all_free_variables():
    with pytest.raises(UnknownVariable):
        evaluate(parse("x1 + x2", ["x1", "x2"]), {"x1": 1.0})


def test_jet_examples():
    j = eval_jet2(parse("x1*x2", ["x1", "x2"]), {"x1": 3, "x2": 5})
    assert j.value == 15
    np.testing.assert_array_equal(j.grad, [5, 3])
    np.testing.assert_array_equal(j.hess, [[0, 1], [1, 0]])
    j = eval_jet2(parse("sin(x1)", ["x1"]), {"x1": 0})
    assert (j.value, j.grad[0], j.hess[0, 0]) == (0.0, 1.0, 0.0)


def test_jet_closed_forms():
    e = parse("exp(x1)*cos(x2) + x1^3/x2 + sqrt(x1)", ["x1", "x2"])
    x1, x2 = 0.7, 1.3
    j = eval_jet2(e, {"x1": x1, "x2": x2})
    g = [math.exp(x1) * math.cos(x2) + 3 * x1**2 / x2 + 0.5 / math.sqrt(x1),
         -math.exp(x1) * math.sin(x2) - x1**3 / x2**2]
    h11 = math.exp(x1) * math.cos(x2) + 6 * x1 / x2 - 0.25 * x1**-1.5
    h12 = -math.exp(x1) * math.sin(x2) - 3 * x1**2 / x2**2
    h22 = -math.exp(x1) * math.cos(x2) + 2 * x1**3 / x2**3
    np.testing.assert_allclose(j.grad, g, rtol=1e-14)
    np.testing.assert_allclose(j.hess, [[h11, h12], [h12, h22]], rtol=1e-13)


def test_variable_exponent_matches_value_path():
    e = parse("x1^x2", ["x1", "x2"])
    env = {"x1": 1.7, "x2": 2.3}
    j = eval_jet2(e, env)
    assert j.value == evaluate(e, env) == 1.7**2.3
    np.testing.assert_allclose(j.grad, [2.3 * 1.7**1.3, math.log(1.7) * 1.7**2.3], rtol=1e-14)


def test_abs_uses_zero_subgradient_at_kink():
    j = eval_jet2(parse("abs(x1)", ["x1"]), {"x1": 0.0})
    assert j.grad[0] == 0.0 and j.hess[0, 0] == 0.0


def test_constant_and_batch_program():
    assert evaluate(constant(2.5), {}) == 2.5
    a, b = parse("x1*x2", X3), parse("x3^2", X3)
    vals, grads, hess = compile_program([a, b], X3, 2)(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(vals, [2.0, 9.0])
    np.testing.assert_array_equal(grads, [[2, 1, 0], [0, 0, 6]])
    assert hess.shape == (2, 3, 3) and hess[1, 2, 2] == 2.0


@settings(max_examples=150, deadline=None)
@given(expression_texts())
def test_render_round_trip(text):
    e = parse(text, X3)
    again = parse(render(e), X3)
    assert again.node == e.node


@settings(max_examples=100, deadline=None)
@given(expression_texts(), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_jets_match_finite_differences(text, point):
    e = parse(text, X3)
    z = np.array(point)
    j = eval_jet2(e, dict(zip(X3, z)))
    f = expr_function(e)
    assert j.value == f(z)
    g = fd_grad(f, z)
    assert np.all(np.abs(j.grad - g) <= np.maximum(1e-6, 1e-6 * np.abs(g)))
    assert np.max(np.abs(j.hess - fd_hess(f, z))) <= 1e-4
    assert np.array_equal(j.hess, j.hess.T)


@settings(max_examples=50, deadline=None)
@given(expression_texts(), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_evaluation_is_deterministic(text, point):
    e1, e2 = parse(text, X3), parse(text, X3)
    env = dict(zip(X3, point))
    a, b = eval_jet2(e1, env), eval_jet2(e2, env)
    assert a.value == b.value or (math.isnan(a.value) and math.isnan(b.value))
    assert np.array_equal(a.grad, b.grad) and np.array_equal(a.hess, b.hess)
