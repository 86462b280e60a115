"""Quadrature rules on the reference segment and triangle in barycentric form."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["QuadratureRule", "quadrature_rule"]


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points ``(nq, d+1)`` and weights summing to one.

    The integral over a simplex ``T`` is ``|T| * sum_q w_q g(x_q)``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    def __len__(self):
        return self.weights.size


def _triangle_radau7():
    # Degree-5 seven-point rule with closed-form nodes.
    s15 = np.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


def _triangle_conical(m):
    """Collapsed (Duffy) product rule with ``m * m`` nodes, exact to degree ``2m - 1``."""
    # Gauss-Jacobi(1, 0) in the collapsed direction absorbs the Jacobian (1 - s).
    xs, ws = roots_jacobi(m, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    ws = ws / 4.0  # maps to integral over s in [0,1] with weight (1-s)
    xg, wg = np.polynomial.legendre.leggauss(m)
    u = 0.5 * (xg + 1.0)
    wg = wg / 2.0
    pts, wts = [], []
    for si, wsi in zip(s, ws):
        for uj, wuj in zip(u, wg):
            l1 = si
            l2 = (1.0 - si) * uj
            pts.append((1.0 - l1 - l2, l1, l2))
            wts.append(wsi * wuj)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def _segment_gauss(m):
    x, w = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (x + 1.0)
    return np.column_stack([1.0 - s, s]), w / 2.0


@lru_cache(maxsize=None)
def quadrature_rule(d: int, degree: int = 5) -> QuadratureRule:
    """Rule on the reference ``d``-simplex exact for polynomials up to ``degree``.

    ``d = 2`` and degree 5 gives the seven-point rule used for assembly;
    ``d = 1`` uses Gauss-Legendre.  Supported degrees are 3, 5 and 7.
    """
    if degree not in (3, 5, 7):
        raise ValueError(f"unsupported quadrature degree {degree} (use 3, 5 or 7)")
    if d == 1:
        pts, wts = _segment_gauss((degree + 1) // 2)
    elif d == 2:
        if degree == 5:
            pts, wts = _triangle_radau7()
        else:
            pts, wts = _triangle_conical((degree + 1) // 2)
    else:
        raise ValueError(f"unsupported simplex dimension {d}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(points=pts, weights=wts, degree=degree)
