import math
from itertools import product

import numpy as np
import pytest

from fracfem.quadrature import quadrature_rule


def monomial_integral(exps):
    """int over the reference simplex of prod x_j^{a_j}."""
    n = len(exps)
    return math.prod(math.factorial(a) for a in exps) / math.factorial(sum(exps) + n)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_rule_exact_up_to_degree(dim, degree):
    rule = quadrature_rule(dim, degree)
    x = rule.points[:, 1:]
    for exps in product(range(degree + 1), repeat=dim):
        if sum(exps) > degree:
            continue
        got = rule.weights @ np.prod(x ** np.array(exps), axis=1)
        assert got == pytest.approx(monomial_integral(exps), rel=1e-14, abs=1e-16)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_weights_positive_points_interior(dim, degree):
    rule = quadrature_rule(dim, degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1 / math.factorial(dim), rel=1e-15)
    assert np.all(rule.points > 0)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, rtol=0, atol=1e-15)


def test_centroid_rule():
    rule = quadrature_rule(3, 1)
    np.testing.assert_array_equal(rule.points, [[0.25] * 4])
    assert rule.weights[0] == pytest.approx(1 / 6)


def test_x1x2_on_reference_tet():
    rule = quadrature_rule(3, 2)
    got = rule.weights @ (rule.points[:, 1] * rule.points[:, 2])
    assert abs(got - 1 / 120) <= 1e-15


@pytest.mark.parametrize("dim,degree", [(1, 2), (3, 0), (3, 5), (4, 1)])
def test_unsupported(dim, degree):
    with pytest.raises(ValueError):
        quadrature_rule(dim, degree)


def test_physical_weights_sum_to_volume(cube3):
    rule = quadrature_rule(3, 2)
    assert rule.physical_weights(cube3).sum() == pytest.approx(1.0, rel=1e-14)
    pts = rule.physical_points(cube3)
    assert pts.shape == (cube3.num_simplices, 4, 3)
