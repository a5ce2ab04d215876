import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pessirelax.expr import (Binary, Const, ExprDomainError, ExprSyntaxError, Pow, Unary, Var,
                             CompiledJet, check_derivatives, eval_jet, evaluate, parse, to_text,
                             variables)


def test_parse_product():
    assert parse("x1*y1", (1, 1)) == Binary("mul", Var("x", 0), Var("y", 0))


def test_parse_precedence_and_value():
    e = parse("x1 + y1^2 - 3", (1, 1))
    assert e == Binary("sub", Binary("add", Var("x", 0), Pow(Var("y", 0), 2)), Const(3.0))
    assert evaluate(e, [1.0], [2.0]) == 2.0


def test_power_binds_tighter_than_minus():
    assert evaluate(parse("-y1^2", (0, 1)), [], [3.0]) == -9.0
    assert evaluate(parse("(-y1)^2", (0, 1)), [], [3.0]) == 9.0


def test_left_associative():
    assert evaluate(parse("8 / 4 / 2", (0, 0)), [], []) == 1.0
    assert evaluate(parse("8 - 4 - 2", (0, 0)), [], []) == 2.0


@pytest.mark.parametrize("text, fragment", [
    ("y3", "out of range"),
    ("z1", "unknown identifier"),
    ("x1 +", "unexpected end"),
    ("x1 $ y1", "unexpected character"),
    ("y1^1.5", "exponent"),
    ("y1^-2", "exponent"),
    ("sin x1", "expected '('"),
    ("", "empty"),
    ("(x1", "expected ')'"),
])
def test_syntax_errors(text, fragment):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text, (1, 2))
    assert fragment in str(info.value)


def test_syntax_error_carries_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + y3", (1, 2))
    assert info.value.pos == 5


def test_variables():
    assert variables(parse("x1*y2 + sin(x2)", (2, 2))) == {("x", 0), ("y", 1), ("x", 1)}


def test_domain_error_is_reported():
    with pytest.raises(ExprDomainError):
        evaluate(parse("log(y1)", (0, 1)), [], [-1.0])
    with pytest.raises(ExprDomainError):
        evaluate(parse("1 / y1", (0, 1)), [], [0.0])
    with pytest.raises(ExprDomainError):
        eval_jet(parse("sqrt(y1)", (0, 1)), [], [-4.0])


def test_jet_product():
    j = eval_jet(parse("x1*y1", (1, 1)), [2.0], [3.0])
    assert j.value == 6.0
    assert list(j.grad) == [3.0, 2.0]
    assert j.hess[0, 1] == j.hess[1, 0] == 1.0
    assert j.hess[0, 0] == j.hess[1, 1] == 0.0


def test_jet_third_derivative():
    j = eval_jet(parse("y1^3", (0, 1)), [], [2.0])
    assert j.third[0, 0, 0] == 6.0


def test_jet_lower_objective_of_linear_example():
    j = eval_jet(parse("-x1*y1", (1, 1)), [0.7], [0.2], order=1, wrt=[("y", 0)])
    assert j.grad[0] == -0.7


def test_jet_exact_on_polynomials():
    # order-k partials are exact for degree <= k
    e = parse("x1^2*y1 - 3*x1*y1^2 + 2", (1, 1))
    j = eval_jet(e, [1.5], [-0.5])
    x, y = 1.5, -0.5
    assert j.grad[0] == 2 * x * y - 3 * y ** 2
    assert j.grad[1] == x ** 2 - 6 * x * y
    assert j.hess[0, 1] == 2 * x - 6 * y
    assert j.third[0, 0, 1] == 2.0
    assert j.third[0, 1, 1] == -6.0


def test_jet_batched_matches_pointwise():
    e = parse("sin(x1*y1) + exp(y2)/(1 + y1^2)", (1, 2))
    xs = np.array([[0.1, 0.4, -0.3]])
    ys = np.array([[0.2, -1.0, 0.5], [0.3, 0.0, -0.2]])
    jb = eval_jet(e, xs, ys)
    for b in range(3):
        jp = eval_jet(e, xs[:, b], ys[:, b])
        assert np.allclose(jb.grad[b], jp.grad, rtol=0, atol=1e-14)
        assert np.allclose(jb.third[b], jp.third, rtol=0, atol=1e-13)


def test_check_derivatives_examples():
    assert check_derivatives(parse("x1*y1", (1, 1)), ([2.0], [3.0]), h=1e-5) < 1e-8
    assert check_derivatives(parse("exp(x1)", (1, 0)), ([1.0], []), h=1e-5) < 1e-8
    assert check_derivatives(parse("y1^4", (0, 1)), ([], [1.5]), h=1e-4) < 1e-6


def test_compiled_matches_tree_jets(rng):
    texts = ["x1*y1 - sin(y2)^2", "exp(x1 - y1) / (2 + cos(y2))", "sqrt(1 + x1^2*y2^2) + log(3 + y1)",
             "-(x1 + y1)^3 + x1*y1*y2"]
    exprs = [parse(s, (1, 2)) for s in texts]
    wrt = [("x", 0), ("y", 0), ("y", 1)]
    cj = CompiledJet(exprs, wrt, order=3)
    for _ in range(20):
        x, y = rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 2)
        v, g, h, t = cj(x, y)
        for r, e in enumerate(exprs):
            j = eval_jet(e, x, y, order=3, wrt=wrt)
            assert v[r] == pytest.approx(float(j.value), rel=1e-13, abs=1e-13)
            assert np.allclose(g[r], j.grad, rtol=1e-12, atol=1e-12)
            assert np.allclose(h[r], j.hess, rtol=1e-12, atol=1e-12)
            assert np.allclose(t[r], j.third, rtol=1e-11, atol=1e-11)


def test_mixed_partial_symmetry_on_builtins(registry, rng):
    for name in registry.names():
        spec = registry[name]
        for e in [spec.F, *spec.G, spec.f, *spec.g]:
            x, y = rng.uniform(0.1, 0.9, spec.n), rng.uniform(0.1, 0.9, spec.m)
            j = eval_jet(e, x, y)
            k = spec.n + spec.m
            scale = max(1.0, float(np.abs(j.third).max()), float(np.abs(j.hess).max()))
            assert np.abs(j.hess - j.hess.T).max() <= 1e-12 * scale
            for perm in itertools.permutations(range(3)):
                assert np.abs(j.third - j.third.transpose(perm)).max() <= 1e-12 * scale
            assert j.grad.shape == (k,)


# -- grammar fuzzing ------------------------------------------------------------------------

N_DIM, M_DIM = 2, 2
_leaf = st.one_of(
    st.sampled_from([f"x{i}" for i in range(1, N_DIM + 1)] + [f"y{j}" for j in range(1, M_DIM + 1)]),
    st.floats(min_value=0, max_value=50, allow_nan=False).map(lambda v: repr(v)),
    st.integers(min_value=0, max_value=99).map(str),
)


def _grow(child):
    return st.one_of(
        st.tuples(child, st.sampled_from("+-*/"), child).map(lambda a: f"{a[0]} {a[1]} {a[2]}"),
        st.tuples(st.sampled_from(["-", "+"]), child).map(lambda a: a[0] + a[1]),
        st.tuples(child, st.integers(0, 4)).map(lambda a: f"({a[0]})^{a[1]}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt"]), child).map(lambda a: f"{a[0]}({a[1]})"),
        child.map(lambda s: f"({s})"),
    )


def _depth(n):
    s = _leaf
    for _ in range(n):
        s = st.one_of(_leaf, _grow(s))
    return s


grammar_strings = _depth(6)


@settings(max_examples=300, deadline=None)
@given(grammar_strings)
def test_grammar_strings_parse(text):
    parse(text, (N_DIM, M_DIM))


@settings(max_examples=300, deadline=None)
@given(grammar_strings)
def test_print_parse_round_trip(text):
    e = parse(text, (N_DIM, M_DIM))
    assert parse(to_text(e), (N_DIM, M_DIM)) == e


_smooth_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "y1", "y2"]),
    st.integers(min_value=1, max_value=5).map(str),
)


def _smooth(child):
    return st.one_of(
        st.tuples(child, st.sampled_from("+-*"), child).map(lambda a: f"({a[0]} {a[1]} {a[2]})"),
        st.tuples(child, st.integers(0, 3)).map(lambda a: f"({a[0]})^{a[1]}"),
        st.tuples(st.sampled_from(["sin", "cos"]), child).map(lambda a: f"{a[0]}({a[1]})"),
        child.map(lambda s: f"exp(({s})/10)"),
        child.map(lambda s: f"log(2 + sin({s}))"),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(_smooth_leaf, _smooth, max_leaves=8),
       st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_ad_matches_fd_on_random_expressions(text, pt):
    e = parse(text, (2, 2))
    x, y = pt[:2], pt[2:]
    # keep values in the well-scaled regime the FD check assumes
    j = eval_jet(e, x, y, order=2)
    if max(abs(float(j.value)), float(np.abs(j.grad).max()), float(np.abs(j.hess).max())) > 1e3:
        return
    assert check_derivatives(e, (x, y), h=1e-5) < 1e-6


def test_constant_printing_round_trips_edge_values():
    for v in (0.0, 1e-300, 1.5e300, 0.1, 123456789.0):
        e = Const(v)
        assert parse(to_text(e), (0, 0)) == e
    neg = Unary("neg", Const(2.0))
    assert parse(to_text(neg), (0, 0)) == neg
    assert math.isclose(evaluate(parse(to_text(Const(-2.5)), (0, 0)), [], []), -2.5)
