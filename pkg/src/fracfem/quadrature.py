"""Symmetric quadrature rules on the reference triangle and tetrahedron.

All rules have strictly interior points and positive weights summing to the
reference simplex volume (1/2 or 1/6).  Points are barycentric coordinates.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    degree: int
    points: np.ndarray   # (m, dim+1) barycentric
    weights: np.ndarray  # (m,)

    def physical_points(self, mesh):
        """Quadrature points of every element, shape (ne, m, dim)."""
        verts = mesh.vertices[mesh.simplices]
        return np.einsum("qj,ejd->eqd", self.points, verts)

    def physical_weights(self, mesh):
        """Weights scaled to each element, shape (ne, m)."""
        return np.abs(mesh.det)[:, None] * self.weights[None, :]


def _orbit(*coords):
    return sorted(set(itertools.permutations(coords)))


def _rule(dim, degree, orbits):
    pts, wts = [], []
    for w, base in orbits:
        for p in _orbit(*base):
            pts.append(p)
            wts.append(w)
    return QuadratureRule(dim, degree, np.array(pts, dtype=float), np.array(wts, dtype=float))


def _tri(degree):
    if degree == 1:
        return _rule(2, 1, [(1 / 2, (1 / 3, 1 / 3, 1 / 3))])
    if degree == 2:
        return _rule(2, 2, [(1 / 6, (2 / 3, 1 / 6, 1 / 6))])
    if degree == 3:
        # Strang-Fix six-point rule
        return _rule(2, 3, [(1 / 12, (0.659027622374092, 0.231933368553031, 0.109039009072877))])
    a1, a2 = 0.44594849091596488632, 0.09157621350977074346
    return _rule(2, 4, [
        (0.11169079483900573285, (1 - 2 * a1, a1, a1)),
        (0.054975871827660933819, (1 - 2 * a2, a2, a2)),
    ])


def _tet(degree):
    if degree == 1:
        return _rule(3, 1, [(1 / 6, (0.25, 0.25, 0.25, 0.25))])
    if degree == 2:
        a = 0.1381966011250105
        return _rule(3, 2, [(1 / 24, (1 - 3 * a, a, a, a))])
    if degree == 3:
        # two equal-weight S31 orbits
        a1, a2 = 0.0134150502093912687990418965219, 0.661129616462466913914559033322
        return _rule(3, 3, [
            (1 / 48, (a1, (1 - a1) / 3, (1 - a1) / 3, (1 - a1) / 3)),
            (1 / 48, (a2, (1 - a2) / 3, (1 - a2) / 3, (1 - a2) / 3)),
        ])
    # 14-point degree-5 rule (positive weights), used for degree 4
    a, b = 0.092735250310891226402, 0.3108859192633006098
    c = 0.045503704125649649492
    return _rule(3, 5, [
        (0.012248840519393658257, (1 - 3 * a, a, a, a)),
        (0.0187813209530026418, (1 - 3 * b, b, b, b)),
        (0.007091003462846911073, (c, c, 0.5 - c, 0.5 - c)),
    ])


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Interior symmetric rule exact for polynomials of degree <= ``degree``."""
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    if degree not in (1, 2, 3, 4):
        raise ValueError(f"unsupported quadrature degree {degree} (1..4)")
    return _tri(degree) if dim == 2 else _tet(degree)
