import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fnhydro.errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
)
from fnhydro.exprdsl import eval_jet2, parse
from fnhydro.sampling import random_polynomial


def test_polynomial_value_and_derivatives():
    j = eval_jet2(parse("x1*x2^2", 2), [2.0, 3.0])
    assert j.value == 18.0
    assert np.allclose(j.grad, [9.0, 12.0])
    assert np.allclose(j.hess, [[0.0, 6.0], [6.0, 4.0]])


def test_transcendental_at_point():
    j = eval_jet2(parse("exp(x1)*sin(x2)", 2), [0.0, math.pi / 2])
    assert j.value == pytest.approx(1.0)
    assert j.grad == pytest.approx([1.0, 0.0], abs=1e-15)


def test_unary_minus_binds_looser_than_power():
    j = eval_jet2(parse("-x1^2", 1), [3.0])
    assert (j.value, j.grad[0], j.hess[0, 0]) == (-9.0, -6.0, -2.0)


@pytest.mark.parametrize("src, expected", [
    ("2^3^2", 512.0),
    ("2**3", 8.0),
    ("8/2/2", 2.0),
    ("1 - 2 - 3", -4.0),
    ("x1^-1", 0.5),
    ("-2^2", -4.0),
    ("pi", math.pi),
    ("1.5e1 + 2E-1", 15.2),
])
def test_precedence_and_literals(src, expected):
    assert parse(src, 1)(np.array([[2.0]]))[0] == pytest.approx(expected)


def test_custom_names():
    e = parse("u*v + v", names=["u", "v"])
    assert e.dim == 2
    assert e(np.array([[2.0, 3.0]]))[0] == 9.0


def test_dimension_comes_from_dim_or_names():
    assert parse("x1", 4).dim == 4
    with pytest.raises(ValueError):
        parse("x1")


@pytest.mark.parametrize("src, cls", [
    ("x1 +", ExprSyntaxError),
    ("(x1", ExprSyntaxError),
    ("x1 $ 2", ExprSyntaxError),
    ("foo(x1)", UnknownIdentifierError),
    ("y1", UnknownIdentifierError),
    ("sin(x1, x2)", ArityError),
    ("sin()", ArityError),
])
def test_syntax_errors(src, cls):
    with pytest.raises(cls):
        parse(src, 2)


def test_syntax_error_points_at_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + * x2", 2)
    assert info.value.position == 5
    assert "^" in str(info.value)


def test_coordinate_beyond_dimension_rejected():
    with pytest.raises(UnknownIdentifierError):
        parse("x3", 2)


@pytest.mark.parametrize("src, point", [
    ("1/x1", [0.0]),
    ("log(x1)", [-1.0]),
    ("sqrt(x1)", [-4.0]),
    ("x1^0.5", [-2.0]),
])
def test_domain_errors(src, point):
    with pytest.raises(DomainError):
        eval_jet2(parse(src, 1), point)


def test_sqrt_at_zero_has_no_derivative():
    assert parse("sqrt(x1)", 1)(np.array([[0.0]]))[0] == 0.0
    with pytest.raises(DomainError):
        eval_jet2(parse("sqrt(x1)", 1), [0.0])


def test_symbolic_derivative_matches_jet():
    e = parse("x1^3*sin(x2) + exp(x1*x2)", 2)
    p = np.array([[0.3, -0.7], [1.1, 0.4]])
    for i in range(2):
        assert np.allclose(e.derivative(i)(p), e.jet(p, 1).grad[:, i], rtol=1e-14)


def test_expr_is_immutable():
    e = parse("x1", 1)
    with pytest.raises(AttributeError):
        e.dim = 3


@given(st.integers(0, 100_000), st.sampled_from([2, 3]))
def test_jet_matches_central_differences(seed, dim):
    rng = np.random.default_rng(seed)
    e = parse(random_polynomial(dim, 4, rng, terms=5), dim)
    p = rng.uniform(-2, 2, (6, dim))
    h = 1e-5
    eye = np.eye(dim)
    j = e.jet(p, 2)
    fd_g = np.stack([(e(p + h * eye[i]) - e(p - h * eye[i])) / (2 * h) for i in range(dim)], axis=1)
    fd_h = np.stack([(e.jet(p + h * eye[i], 1).grad - e.jet(p - h * eye[i], 1).grad) / (2 * h)
                     for i in range(dim)], axis=2)
    scale_g = max(1.0, np.max(np.abs(j.grad)))
    scale_h = max(1.0, np.max(np.abs(j.hess)))
    assert np.max(np.abs(j.grad - fd_g)) <= 1e-6 * scale_g
    assert np.max(np.abs(j.hess - fd_h)) <= 1e-6 * scale_h


@given(st.integers(0, 100_000))
def test_print_parse_roundtrip(seed):
    rng = np.random.default_rng(seed)
    src = random_polynomial(3, 4, rng) + " - sin(x1)/(2 + x2^2) + exp(-x3)^2"
    e = parse(src, 3)
    again = parse(e.to_source(), 3)
    p = rng.uniform(-2, 2, (100, 3))
    assert np.array_equal(e(p), again(p))
    assert again.to_source() == e.to_source()
