import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from composite_dg.exceptions import UnsupportedDegree
from composite_dg.quadrature import segment_rule, triangle_moment, triangle_rule


def ref_integral(rule, a, b):
    x, y = rule.points[:, 1], rule.points[:, 2]
    return 0.5 * np.sum(rule.weights * x**a * y**b)


@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_triangle_weights_sum_to_one(degree):
    r = triangle_rule(degree)
    assert r.degree == degree
    assert math.isclose(r.weights.sum(), 1.0, abs_tol=1e-15)
    assert np.allclose(r.points.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(r.points >= -1e-15)


@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_triangle_exactness(degree):
    r = triangle_rule(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = triangle_moment(a, b)
            assert abs(ref_integral(r, a, b) - exact) <= 1e-14 * max(exact, 1e-3)


def test_centroid_rule():
    r = triangle_rule(1)
    assert r.points.shape == (1, 3)
    assert np.allclose(r.points, 1 / 3)
    assert r.weights[0] == pytest.approx(1.0)


def test_spec_moments():
    assert ref_integral(triangle_rule(2), 1, 0) == pytest.approx(1 / 6, abs=1e-15)
    assert ref_integral(triangle_rule(4), 2, 2) == pytest.approx(1 / 180, abs=1e-14)
    assert triangle_moment(2, 2) == pytest.approx(1 / 180)


def test_unsupported_degree():
    for d in (0, 3, 5, 7):
        with pytest.raises(UnsupportedDegree):
            triangle_rule(d)
    for d in (0, 2, 4, 6):
        with pytest.raises(UnsupportedDegree):
            segment_rule(d)


@pytest.mark.parametrize("degree,npts", [(1, 1), (3, 2), (5, 3)])
def test_segment_rules(degree, npts):
    r = segment_rule(degree)
    assert len(r.weights) == npts
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-15)
    for k in range(degree + 1):
        assert np.sum(r.weights * r.points**k) == pytest.approx(1 / (k + 1), abs=1e-15)


def test_segment_spec_examples():
    assert np.sum(segment_rule(1).weights * segment_rule(1).points) == pytest.approx(0.5)
    r3, r5 = segment_rule(3), segment_rule(5)
    assert abs(np.sum(r3.weights * r3.points**3) - 0.25) <= 1e-15
    assert abs(np.sum(r5.weights * r5.points**5) - 1 / 6) <= 1e-15


def _physical_moment(p, a, b):
    """Exact integral of x^a y^b over triangle p via the degree-6 rule on a
    sympy-free route: expand through the affine map with binomial moments."""
    from itertools import product
    (x0, y0), (x1, y1), (x2, y2) = p
    J = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    # x = x0 + (x1-x0) s + (x2-x0) t, likewise y; expand monomials in (s, t)
    cx = {(0, 0): x0, (1, 0): x1 - x0, (0, 1): x2 - x0}
    cy = {(0, 0): y0, (1, 0): y1 - y0, (0, 1): y2 - y0}
    poly = {(0, 0): 1.0}
    for coeffs, power in ((cx, a), (cy, b)):
        for _ in range(power):
            new = {}
            for (i, j), c in poly.items():
                for (di, dj), d in coeffs.items():
                    new[(i + di, j + dj)] = new.get((i + di, j + dj), 0.0) + c * d
            poly = new
    return J * sum(c * triangle_moment(i, j) for (i, j), c in poly.items())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6),
       st.integers(0, 4), st.integers(0, 4))
def test_affine_map_consistency(coords, a, b):
    p = np.array(coords).reshape(3, 2)
    area2 = abs((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    if area2 < 1e-3 or a + b > 6:
        return
    r = triangle_rule(6)
    xq = r.points @ p[:, 0]
    yq = r.points @ p[:, 1]
    approx = 0.5 * area2 * np.sum(r.weights * xq**a * yq**b)
    exact = _physical_moment(p, a, b)
    scale = 0.5 * area2 * np.max(np.abs(p)) ** (a + b) + 1e-300
    assert abs(approx - exact) <= 1e-12 * max(abs(exact), scale)
