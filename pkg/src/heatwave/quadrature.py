"""Quadrature rules used by the assembly and norm routines.

Symmetric positive-weight triangle rules (weights normalized to sum to one,
scale by the cell area), Gauss-Legendre rules on [0, 1], and the right
Gauss-Radau nodes that anchor the temporal basis of each slab.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

__all__ = ["triangle_rule", "gauss01", "radau_right01"]


def _perm3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _perm6(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _build_rule(groups) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = [], []
    for w, nodes in groups:
        for p in nodes:
            pts.append(p)
            wts.append(w)
    bary = np.array(pts, dtype=float)
    w = np.array(wts, dtype=float)
    w /= w.sum()
    return bary, w


_S15 = math.sqrt(15.0)

# Symmetric rules with strictly positive weights, keyed by polynomial degree.
_TRI_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {
    1: _build_rule([(1.0, [(1 / 3, 1 / 3, 1 / 3)])]),
    2: _build_rule([(1 / 3, _perm3(1 / 6))]),
    4: _build_rule(
        [
            (0.223381589678011, _perm3(0.445948490915965)),
            (0.109951743655322, _perm3(0.091576213509771)),
        ]
    ),
    5: _build_rule(
        [
            (9 / 40, [(1 / 3, 1 / 3, 1 / 3)]),
            ((155.0 + _S15) / 1200.0, _perm3((6.0 + _S15) / 21.0)),
            ((155.0 - _S15) / 1200.0, _perm3((6.0 - _S15) / 21.0)),
        ]
    ),
    6: _build_rule(
        [
            (0.116786275726379, _perm3(0.249286745170910)),
            (0.050844906370207, _perm3(0.063089014491502)),
            (0.082851075618374, _perm6(0.053145049844816, 0.310352451033785)),
        ]
    ),
}


@lru_cache(maxsize=None)
def _conical_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Duffy-collapsed Gauss/Gauss-Jacobi product, exact to any degree.
    from scipy.special import roots_jacobi

    n = degree // 2 + 1
    xg, wg = np.polynomial.legendre.leggauss(n)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj
    lam2 = np.outer(xg, 1.0 - xj).ravel()
    lam3 = np.repeat(xj[None, :], n, axis=0).ravel()
    bary = np.column_stack([1.0 - lam2 - lam3, lam2, lam3])
    w = np.outer(wg, wj).ravel()
    return bary, w / w.sum()


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (barycentric points, weights) exact for polynomials of `degree`.

    Weights sum to one; multiply by the cell area to integrate.
    """
    if degree < 1:
        degree = 1
    for d in sorted(_TRI_RULES):
        if d >= degree:
            return _TRI_RULES[d]
    return _conical_rule(degree)


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1], exact to degree 2n - 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def radau_right01(q: int) -> np.ndarray:
    """Right Gauss-Radau nodes on [0, 1] for polynomial degree q.

    q + 1 nodes including the right endpoint, so the value at the end of a
    slab is a stored coefficient.
    """
    if q == 0:
        return np.array([1.0])
    if q == 1:
        return np.array([1.0 / 3.0, 1.0])
    if q == 2:
        s6 = math.sqrt(6.0)
        return np.array([(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0])
    raise ValueError(f"temporal degree q={q} not supported (q in 0..2)")
