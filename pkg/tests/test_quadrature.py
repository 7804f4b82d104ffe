import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgstokes.errors import InvalidArgumentError
from hdgstokes.quadrature import MAX_ORDER, quadrature


def test_interval_order3_two_point_gauss():
    q = quadrature("interval", 3)
    assert len(q) == 2
    np.testing.assert_allclose(np.sort(q.points[:, 0]), [(3 - math.sqrt(3)) / 6, (3 + math.sqrt(3)) / 6], atol=1e-15)
    np.testing.assert_allclose(q.weights, [0.5, 0.5], atol=1e-15)


def test_square_midpoint_integrates_x():
    q = quadrature("square", 1)
    assert abs(q.weights @ q.points[:, 0] - 0.5) < 1e-15


def test_triangle_xy():
    q = quadrature("triangle", 2)
    assert abs(q.weights @ (q.points[:, 0] * q.points[:, 1]) - 1 / 24) < 1e-15


@pytest.mark.parametrize("shape, measure", [("interval", 1.0), ("square", 1.0), ("quad", 1.0), ("triangle", 0.5)])
@pytest.mark.parametrize("order", [1, 2, 5, 12, MAX_ORDER])
def test_weights_sum_to_measure(shape, measure, order):
    q = quadrature(shape, order)
    assert abs(q.weights.sum() - measure) < 1e-14
    assert (q.weights > 0).all()


@pytest.mark.parametrize("order", [0, -1, MAX_ORDER + 1])
def test_order_out_of_range(order):
    with pytest.raises(InvalidArgumentError):
        quadrature("square", order)


def test_unknown_shape():
    with pytest.raises(InvalidArgumentError):
        quadrature("hexagon", 2)


@settings(max_examples=60, deadline=None)
@given(order=st.integers(1, 20), a=st.integers(0, 20), b=st.integers(0, 20))
def test_square_monomials_exact(order, a, b):
    if max(a, b) > order:
        return
    q = quadrature("square", order)
    exact = 1.0 / ((a + 1) * (b + 1))
    got = q.weights @ (q.points[:, 0] ** a * q.points[:, 1] ** b)
    assert abs(got - exact) <= 1e-13 * exact


@settings(max_examples=60, deadline=None)
@given(order=st.integers(1, 20), a=st.integers(0, 20), b=st.integers(0, 20))
def test_triangle_monomials_exact(order, a, b):
    if a + b > order:
        return
    q = quadrature("triangle", order)
    exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
    got = q.weights @ (q.points[:, 0] ** a * q.points[:, 1] ** b)
    assert abs(got - exact) <= 1e-13 * exact


def test_random_polynomial_on_interval(rng):
    for order in (3, 8, 17):
        c = rng.standard_normal(order + 1)
        q = quadrature("interval", order)
        exact = sum(ci / (i + 1) for i, ci in enumerate(c))
        got = q.weights @ np.polynomial.polynomial.polyval(q.points[:, 0], c)
        assert abs(got - exact) <= 1e-13 * max(1.0, abs(exact))
