import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxwell_afem.quadrature import MAX_DEGREE, barycentric, quadrature


def simplex_monomial(powers):
    """Integral of prod x_i**p_i over the reference simplex (Dirichlet formula)."""
    num = np.prod([math.factorial(p) for p in powers])
    return num / math.factorial(sum(powers) + len(powers))


def test_tet_degree_one_is_barycenter():
    pts, w = quadrature("tet", 1)
    np.testing.assert_allclose(pts, [[0.25, 0.25, 0.25]])
    np.testing.assert_allclose(w, [1 / 6])


def test_triangle_degree_two_integrates_x_squared():
    pts, w = quadrature("triangle", 2)
    assert len(w) == 3
    assert abs(w @ pts[:, 0] ** 2 - 1 / 12) <= 1e-15


@pytest.mark.parametrize("domain,measure", [("tet", 1 / 6), ("triangle", 1 / 2)])
@pytest.mark.parametrize("degree", range(MAX_DEGREE + 1))
def test_weights_sum_to_measure(domain, measure, degree):
    pts, w = quadrature(domain, degree)
    assert abs(w.sum() - measure) <= 1e-15
    assert np.all(w > 0)
    assert np.all(pts >= 0) and np.all(pts.sum(axis=1) <= 1 + 1e-15)


def test_tet_degree_four_all_monomials():
    pts, w = quadrature("tet", 4)
    for p in np.ndindex(5, 5, 5):
        if sum(p) <= 4:
            got = w @ np.prod(pts ** np.array(p), axis=1)
            assert abs(got - simplex_monomial(p)) <= 1e-14


@given(st.sampled_from(["tet", "triangle"]), st.integers(0, MAX_DEGREE), st.data())
def test_rules_exact_to_degree(domain, degree, data):
    d = 3 if domain == "tet" else 2
    powers = data.draw(st.lists(st.integers(0, degree), min_size=d, max_size=d)
                       .filter(lambda p: sum(p) <= degree))
    pts, w = quadrature(domain, degree)
    got = w @ np.prod(pts ** np.array(powers), axis=1)
    assert abs(got - simplex_monomial(powers)) <= 1e-14


@pytest.mark.parametrize("args", [("tet", 5), ("triangle", -1), ("hexahedron", 1)])
def test_unsupported(args):
    with pytest.raises(ValueError):
        quadrature(*args)


def test_returned_rules_are_copies():
    pts, w = quadrature("tet", 2)
    w[:] = 0.0
    assert quadrature("tet", 2)[1].sum() > 0


def test_barycentric_coordinates():
    b = barycentric(np.array([[0.1, 0.2, 0.3]]))
    np.testing.assert_allclose(b, [[0.4, 0.1, 0.2, 0.3]])
