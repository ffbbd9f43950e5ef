"""Quadrature rules on the reference triangle and tetrahedron.

Low degrees use the classical symmetric rules; higher degrees use collapsed
(Duffy) tensor products of Gauss-Jacobi rules, which have positive weights
and are exact for every polynomial up to the requested degree.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 4


def _check(degree):
    if not (isinstance(degree, (int, np.integer)) and 0 <= degree <= MAX_DEGREE):
        raise ValueError(f"unsupported quadrature degree {degree!r} (0..{MAX_DEGREE})")


def _gauss_jacobi01(n, alpha):
    """``n``-point rule on [0, 1] for the weight ``(1 - t)**alpha``."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _collapsed_triangle(degree):
    n = degree // 2 + 1
    s, ws = _gauss_jacobi01(n, 1.0)
    t, wt = _gauss_jacobi01(n, 0.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = np.stack([S.ravel(), (T * (1 - S)).ravel()], axis=1)
    return pts, np.outer(ws, wt).ravel()


def _collapsed_tet(degree):
    n = degree // 2 + 1
    r, wr = _gauss_jacobi01(n, 2.0)
    s, ws = _gauss_jacobi01(n, 1.0)
    t, wt = _gauss_jacobi01(n, 0.0)
    R, S, T = np.meshgrid(r, s, t, indexing="ij")
    x = R
    y = S * (1 - R)
    z = T * (1 - R) * (1 - S)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    w = (wr[:, None, None] * ws[None, :, None] * wt[None, None, :]).ravel()
    return pts, w


@lru_cache(maxsize=None)
def _rule(domain, degree):
    if domain == "tet":
        if degree <= 1:
            return np.full((1, 3), 0.25), np.array([1.0 / 6.0])
        if degree == 2:
            a, b = 0.5854101966249685, 0.1381966011250105
            pts = np.full((4, 3), b)
            pts[1, 0] = pts[2, 1] = pts[3, 2] = a
            return pts, np.full(4, 1.0 / 24.0)
        return _collapsed_tet(degree)
    if domain == "triangle":
        if degree <= 1:
            return np.full((1, 2), 1.0 / 3.0), np.array([0.5])
        if degree == 2:
            pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            return pts, np.full(3, 1.0 / 6.0)
        return _collapsed_triangle(degree)
    raise ValueError(f"unknown quadrature domain {domain!r}")


def quadrature(domain: str, degree: int):
    """Points and weights of a rule exact up to ``degree``.

    Parameters
    ----------
    domain : {"tet", "triangle"}
        Reference tetrahedron (vertices 0, e1, e2, e3, volume 1/6) or
        reference triangle (vertices 0, e1, e2, area 1/2).
    degree : int
        Polynomial degree integrated exactly, at most 4.

    Returns
    -------
    points : ndarray, shape (n, 3) or (n, 2)
        Cartesian coordinates on the reference element.
    weights : ndarray, shape (n,)
    """
    _check(degree)
    pts, w = _rule(domain, int(degree))
    return pts.copy(), w.copy()


def barycentric(points):
    """Append the leading barycentric coordinate: ``(n, d) -> (n, d + 1)``."""
    points = np.atleast_2d(points)
    return np.concatenate([1.0 - points.sum(axis=1, keepdims=True), points], axis=1)
