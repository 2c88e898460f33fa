import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nonholo.exprlang import (BinOp, Call, DomainError, ExprSyntaxError, Num,
                              UnboundVariableError, UnknownFunctionError, Var, eval_derivs,
                              evaluate, free_vars, parse, to_source)


def test_precedence_add_mul_call():
    assert parse("2*x + sin(t)") == BinOp("+", BinOp("*", Num(2.0), Var("x")), Call("sin", Var("t")))


def test_power_is_right_associative():
    assert parse("x^2^3") == BinOp("^", Var("x"), BinOp("^", Num(2.0), Num(3.0)))


def test_unary_minus_binds_looser_than_power():
    assert evaluate(parse("-x^2"), {"x": 3}) == -9.0
    assert evaluate(parse("2^-1"), {}) == 0.5


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("2*+x")
    assert info.value.offset == 2
    assert info.value.expected


@pytest.mark.parametrize("src", ["", "x +", "(x", "x y", "3 4", "sin x"])
def test_malformed_inputs(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_unknown_function():
    with pytest.raises(UnknownFunctionError):
        parse("cosh(x)")


def test_eval_examples():
    assert evaluate(parse("x^2"), {"x": 3}) == 9.0
    assert evaluate(parse("pi"), {}) == 3.141592653589793
    with pytest.raises(DomainError):
        evaluate(parse("sqrt(x)"), {"x": -1})


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse("log(x)"), {"x": 0.0})
    with pytest.raises(DomainError):
        evaluate(parse("x^0.5"), {"x": -2.0})
    assert evaluate(parse("x^3"), {"x": -2.0}) == -8.0


def test_unbound_variable_is_an_error():
    with pytest.raises(UnboundVariableError):
        evaluate(parse("x + y"), {"x": 1.0})


def test_derivative_examples():
    val, grad, hess = eval_derivs(parse("x^2"), {"x": 3}, ["x"])
    assert val == 9 and grad.tolist() == [6.0] and hess is None
    val, grad, _ = eval_derivs(parse("x*y"), {"x": 2, "y": 5}, ["y"])
    assert val == 10 and grad.tolist() == [2.0]
    val, grad, hess = eval_derivs(parse("sin(t)"), {"t": 0.0}, ["t"], order=2)
    assert (val, grad[0], hess[0, 0]) == (0.0, 1.0, 0.0)


def test_free_vars():
    assert free_vars(parse("2*x + sin(t)")) == {"x", "t"}
    assert free_vars(parse("3.5")) == set()
    assert free_vars(parse("x + x")) == {"x"}
    assert free_vars(parse("pi*r")) == {"r"}


# -- random expression trees -------------------------------------------------

VARS = ("x", "y", "z")

leaves = st.one_of(
    st.sampled_from(VARS).map(Var),
    st.integers(1, 5).map(lambda k: Num(float(k))),
    st.sampled_from([0.5, 1.5, 2.25]).map(Num),
)


def _trees(children):
    return st.one_of(
        st.builds(BinOp, st.sampled_from("+-*"), children, children),
        st.builds(lambda a, b: BinOp("/", a, BinOp("+", Num(3.0), Call("sin", b))), children, children),
        st.builds(lambda a, k: BinOp("^", a, Num(float(k))), children, st.integers(2, 3)),
        st.builds(Call, st.sampled_from(["sin", "cos", "exp"]), children),
        st.builds(lambda a: Call("sqrt", BinOp("+", Num(1.0), BinOp("*", a, a))), children),
        st.builds(lambda a: Call("log", BinOp("+", Num(2.0), Call("cos", a))), children),
    )


exprs = st.recursive(leaves, _trees, max_leaves=8)
points = st.tuples(*[st.floats(-2, 2) for _ in VARS])


@given(exprs)
def test_print_parse_roundtrip(e):
    text = to_source(e)
    again = parse(text)
    assert to_source(again) == text
    assert again == parse(to_source(again))


@given(exprs, points)
def test_ad_gradient_matches_central_difference(e, pt):
    env = dict(zip(VARS, pt))
    val, grad, _ = eval_derivs(e, env, list(VARS), order=1)
    assume(math.isfinite(val) and abs(val) < 1e6 and np.all(np.abs(grad) < 1e6))
    h = 1e-6
    for i, v in enumerate(VARS):
        up, dn = dict(env), dict(env)
        up[v] += h
        dn[v] -= h
        fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
        assert abs(grad[i] - fd) / (1 + abs(grad[i])) < 1e-6


@given(exprs, points)
def test_first_and_second_order_agree(e, pt):
    env = dict(zip(VARS, pt))
    v1, g1, _ = eval_derivs(e, env, list(VARS), order=1)
    v2, g2, h2 = eval_derivs(e, env, list(VARS), order=2)
    assert v1 == v2
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_allclose(h2, h2.T, rtol=1e-12, atol=1e-9)
    assert v1 == evaluate(e, env)


@given(exprs, points)
def test_hessian_matches_difference_of_gradients(e, pt):
    env = dict(zip(VARS, pt))
    _, g, H = eval_derivs(e, env, list(VARS), order=2)
    assume(np.all(np.abs(H) < 1e5) and np.all(np.abs(g) < 1e5))
    h = 1e-5
    for i, v in enumerate(VARS):
        up, dn = dict(env), dict(env)
        up[v] += h
        dn[v] -= h
        fd = (eval_derivs(e, up, list(VARS))[1] - eval_derivs(e, dn, list(VARS))[1]) / (2 * h)
        np.testing.assert_allclose(H[:, i], fd, rtol=1e-4, atol=1e-4)
