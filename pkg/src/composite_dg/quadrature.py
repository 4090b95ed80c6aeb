"""Gauss quadrature on the reference triangle and on the unit interval.

Triangle rules are the symmetric Dunavant rules. Their tabulated points
are polished to full double precision at import time by solving the moment
equations, so every rule integrates its monomials to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.optimize import least_squares

from .exceptions import UnsupportedDegree

__all__ = ["TriangleRule", "SegmentRule", "triangle_rule", "segment_rule",
           "triangle_moment"]


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature on the reference triangle, weights normalized to sum 1.

    ``points`` holds barycentric coordinates, shape ``(n, 3)``. Multiply a
    weighted sum by the triangle area to get a physical integral.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


@dataclass(frozen=True)
class SegmentRule:
    """Gauss-Legendre rule on ``[0, 1]`` with weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def triangle_moment(a: int, b: int) -> float:
    """Exact integral of ``x**a * y**b`` over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


# Orbit tables: ("s3", w) | ("s21", a, w) | ("s111", a, b, w).
_DUNAVANT = {
    1: [("s3", 1.0)],
    2: [("s21", 1.0 / 6.0, 1.0 / 3.0)],
    4: [("s21", 0.445948490915965, 0.223381589678011),
        ("s21", 0.091576213509771, 0.109951743655322)],
    6: [("s21", 0.249286745170910, 0.116786275726379),
        ("s21", 0.063089014491502, 0.050844906370207),
        ("s111", 0.053145049844817, 0.310352451033784, 0.082851075618374)],
}


def _expand(orbits, params):
    pts, wts = [], []
    k = 0
    for orbit in orbits:
        kind = orbit[0]
        if kind == "s3":
            w = params[k]
            k += 1
            pts.append((1 / 3, 1 / 3, 1 / 3))
            wts.append(w)
        elif kind == "s21":
            a, w = params[k:k + 2]
            k += 2
            c = 1.0 - 2.0 * a
            for p in ((a, a, c), (a, c, a), (c, a, a)):
                pts.append(p)
                wts.append(w)
        else:
            a, b, w = params[k:k + 3]
            k += 3
            c = 1.0 - a - b
            for p in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
                pts.append(p)
                wts.append(w)
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


def _moment_residual(params, orbits, degree):
    pts, wts = _expand(orbits, params)
    x, y = pts[:, 1], pts[:, 2]
    res = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            # weights are normalized to reference area 1/2
            res.append(np.dot(wts, x**a * y**b) - 2.0 * triangle_moment(a, b))
    return np.array(res)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> TriangleRule:
    """Symmetric Gauss rule exact for total degree ``degree`` (1, 2, 4 or 6)."""
    if degree not in _DUNAVANT:
        raise UnsupportedDegree(f"no triangle rule of degree {degree}")
    orbits = _DUNAVANT[degree]
    params = np.array([v for orbit in orbits for v in orbit[1:]], dtype=float)
    if degree > 2:
        sol = least_squares(_moment_residual, params, args=(orbits, degree),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        params = sol.x
    pts, wts = _expand(orbits, params)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return TriangleRule(pts, wts, degree)


_SEGMENT_POINTS = {1: 1, 3: 2, 5: 3}


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> SegmentRule:
    """Gauss-Legendre rule on ``[0, 1]`` exact for degree 1, 3 or 5."""
    if degree not in _SEGMENT_POINTS:
        raise UnsupportedDegree(f"no segment rule of degree {degree}")
    x, w = np.polynomial.legendre.leggauss(_SEGMENT_POINTS[degree])
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return SegmentRule(pts, wts, degree)
