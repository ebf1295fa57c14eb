import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from invlab.expr import (ArityError, DimensionError, ExprDomainError, ExprSyntaxError,
                         UnknownIdentifierError, evaluate, evaluate_batch, parse, to_source)


def test_gaussian_at_origin():
    assert evaluate(parse("exp(-norm2(x))"), [0.0, 0.0]) == 1.0


def test_constant_vector_dot():
    e = parse("1 + exp(2*dot(c,x))", {"c": [1.0, 0.0]})
    assert evaluate(e, [0.0, 0.0]) == 2.0


def test_ln_domain_error():
    with pytest.raises(ExprDomainError):
        evaluate(parse("ln(x1)"), [-1.0])


def test_sum_of_squares():
    assert evaluate(parse("x1^2 + x2^2"), [3.0, 4.0]) == 25.0


def test_shifted_double_exponential():
    assert evaluate(parse("exp(x1 - exp(-x1))"), [0.0]) == pytest.approx(0.36787944, abs=1e-8)
    assert evaluate(parse("exp(x1 - exp(-x1))"), [0.0]) == math.exp(-1.0)


def test_power_of_squared_norm():
    assert evaluate(parse("norm2(x)^(m/2)", {"m": -2}), [2.0, 0.0]) == 0.25


@pytest.mark.parametrize("src, value", [("2+3*4", 14.0), ("-2^2", -4.0), ("2^3^2", 512.0),
                                        ("2^-1", 0.5), ("(1+2)*3", 9.0), ("8/4/2", 1.0),
                                        ("10-4-3", 3.0), ("-x1^2", -9.0)])
def test_precedence(src, value):
    assert evaluate(parse(src), [3.0]) == value


def test_function_library():
    e = parse("sqrt(abs(x1)) + sin(0) + cos(0) + tanh(0) + min(x1, 2, 5) + max(1, x2) + norm(x)")
    assert evaluate(e, [-4.0, 3.0]) == pytest.approx(2.0 + 1.0 - 4.0 + 3.0 + 5.0)


def test_pi_and_e():
    assert evaluate(parse("pi + e"), [0.0]) == math.pi + math.e


def test_syntax_error_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("1 +\n  * 2")
    assert info.value.line == 2 and info.value.col == 3


def test_unknown_identifier_and_arity():
    with pytest.raises(UnknownIdentifierError):
        parse("y + 1")
    with pytest.raises(UnknownIdentifierError):
        parse("foo(x1)")
    with pytest.raises(ArityError):
        parse("exp(x1, x2)")
    with pytest.raises(ArityError):
        parse("min(x1)")


def test_vector_outside_vector_function_is_rejected():
    with pytest.raises(ExprSyntaxError):
        parse("x + 1")
    with pytest.raises(ExprSyntaxError):
        parse("norm2(x1)")


def test_domain_errors():
    for src, x in (("1/x1", 0.0), ("sqrt(x1 - 1)", 0.0), ("(-1)^0.5", 0.0), ("exp(1000*x1)", 1.0),
                   ("0^(-1)", 0.0), ("ln(x1)", 0.0)):
        with pytest.raises(ExprDomainError):
            evaluate(parse(src), [x])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(parse("x3"), [1.0, 2.0])
    with pytest.raises(DimensionError):
        evaluate_batch(parse("x1"), [1.0, 2.0])


def test_batch_matches_pointwise():
    e = parse("exp(-x1) * sin(x2) + norm2(x)")
    X = np.random.default_rng(0).normal(size=(16, 2))
    assert np.array_equal(evaluate_batch(e, X), [evaluate(e, x) for x in X])


# -- round trip over random expressions -----------------------------------------------

_leaf = st.one_of(st.sampled_from(["x1", "x2", "a", "pi"]),
                  st.floats(min_value=-5, max_value=5, allow_nan=False).map(repr))


def _compose(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]}){t[1]}({t[2]})")
    unary = st.tuples(st.sampled_from(["-", "exp", "sin", "tanh", "abs", "cos"]), children).map(
        lambda t: f"-({t[1]})" if t[0] == "-" else f"{t[0]}({t[1]})")
    both = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda t: f"{t[0]}({t[1]}, {t[2]})")
    return st.one_of(binary, unary, both)


expressions = st.recursive(_leaf, _compose, max_leaves=12)


def _safe(e, X):
    try:
        return evaluate_batch(e, X)
    except ExprDomainError:
        return None


@given(expressions, st.integers(min_value=0, max_value=2**32 - 1))
def test_print_parse_roundtrip_is_bit_identical(src, seed):
    consts = {"a": 0.7}
    e1 = parse(src, consts)
    e2 = parse(to_source(e1), consts)
    assert e1.tree == e2.tree
    X = np.random.default_rng(seed).uniform(-2, 2, size=(10, 2))
    v1, v2 = _safe(e1, X), _safe(e2, X)
    if v1 is None:
        assert v2 is None
    else:
        assert np.array_equal(v1, v2, equal_nan=True)


@given(expressions)
def test_evaluation_finite_or_signalled(src):
    e = parse(src, {"a": 0.7})
    X = np.random.default_rng(1).uniform(-2, 2, size=(10, 2))
    v = _safe(e, X)
    assert v is None or np.all(np.isfinite(v))
