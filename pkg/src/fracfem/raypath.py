"""Integration paths: walk an axis ray from a point to the domain boundary.

The ray is written in the volume coordinates of each simplex it meets, which
turns the intersection test into n+1 half-line constraints on the ray
parameter r.  The exit point's zero components name the face, edge or vertex
through which the ray leaves, and mesh adjacency gives the next simplex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .mesh import EPS_FACE, SimplicialMesh, barycentric_all


class Side(str, Enum):
    LEFT = "left"     # integrate from a_i(x) up to x_i: ray along -e_i
    RIGHT = "right"   # integrate from x_i up to b_i(x): ray along +e_i

    @property
    def code(self):
        return 0 if self is Side.LEFT else 1

    @property
    def opposite(self):
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


class TraversalError(RuntimeError):
    """The walk could not advance (stall) or revisited a simplex (cycle)."""


@dataclass(frozen=True)
class RayQuery:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-14:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @classmethod
    def axis(cls, origin, axis: int, side: Side, dim: int):
        d = np.zeros(dim)
        d[axis] = -1.0 if Side(side) is Side.LEFT else 1.0
        return cls(origin, d)


@dataclass(frozen=True)
class SegmentHit:
    simplex_id: int
    r_min: float
    r_max: float
    k_min: np.ndarray
    k_max: np.ndarray

    @property
    def length(self):
        return self.r_max - self.r_min


@dataclass
class IntegrationPath:
    gauss_point: np.ndarray
    direction_index: int
    side: Side
    segments: list = field(default_factory=list)
    chord_bound: float = float("nan")
    examined: int = 0

    @property
    def length(self):
        return sum(s.length for s in self.segments)

    def to_csv_rows(self, mesh):
        rows = []
        for m, s in enumerate(self.segments):
            zero = exit_face(s)
            ent = [int(mesh.simplices[s.simplex_id, j]) for j in range(mesh.dim + 1) if j not in zero]
            rows.append((m, s.simplex_id, s.r_min, s.r_max, "-".join(map(str, ent))))
        return rows


def ray_simplex_intersect(mesh: SimplicialMesh, simplex_id: int, query: RayQuery):
    """Intersection of a ray with one simplex, or ``None``.

    Solves k = A^{-1}(u0 - v0) + r A^{-1} d, appends the complementary
    coordinate, and intersects the half-lines {r : b_c + r d_c >= 0} with
    r >= 0.  Empty and single-point intersections give ``None``.
    """
    inv = mesh.inverse_jacobians[simplex_id]
    v0 = mesh.vertices[mesh.simplices[simplex_id, 0]]
    kb = inv @ (query.origin - v0)
    kd = inv @ query.direction
    bt = np.r_[1.0 - kb.sum(), kb]
    dt = np.r_[-kd.sum(), kd]
    lo, hi = 0.0, np.inf
    dmax = np.abs(dt).max()
    for b, d in zip(bt, dt):
        if abs(d) <= 1e-13 * dmax:
            if b < -EPS_FACE:
                return None
        elif d > 0:
            lo = max(lo, -b / d)
        else:
            hi = min(hi, -b / d)
    if not hi > lo:
        return None
    return SegmentHit(int(simplex_id), lo, hi, bt + lo * dt, bt + hi * dt)


def exit_face(hit: SegmentHit, eps: float = EPS_FACE) -> frozenset:
    """Local indices whose exit coordinate vanishes.

    One zero means the ray leaves through the opposite (n-1)-face, two zeros
    an edge (3-D), n zeros a vertex.
    """
    zero = frozenset(int(j) for j in np.flatnonzero(np.abs(hit.k_max) <= eps))
    if len(zero) == len(hit.k_max):
        raise ValueError("all volume coordinates vanish: corrupted barycentric data")
    return zero


def _containing_simplices(mesh, point):
    k = barycentric_all(mesh, point)
    kmin = k.min(axis=1)
    ids = np.flatnonzero(kmin >= -EPS_FACE)
    return [int(i) for i in ids[np.argsort(-kmin[ids], kind="stable")]]


def trace_path(mesh: SimplicialMesh, point, direction_index: int, side: Side | str,
               start_simplex: int | None = None, backend=None) -> IntegrationPath:
    """Ordered segments of the chord from ``point`` to the boundary.

    ``direction_index`` is the 0-based axis.  ``start_simplex`` should be a
    simplex containing the point in its interior; without it the point is
    located by exhaustive scan.
    """
    side = Side(side)
    point = np.ascontiguousarray(point, dtype=float)
    kern = _kernels.get_backend(backend)
    if start_simplex is None:
        # a point on a face or edge belongs to several simplices; start in
        # one the ray actually enters
        candidates = _containing_simplices(mesh, point)
        if not candidates:
            raise ValueError(f"point {point.tolist()} lies outside the mesh")
    else:
        candidates = [int(start_simplex)]
    for e0 in candidates:
        status, simp, r0, r1, k0, k1, examined, last = kern.trace(
            mesh.kernel_arrays, e0, point, int(direction_index), side.code)
        if status != _kernels.NOT_INSIDE:
            break
    start_simplex = candidates[0]
    if status == _kernels.NOT_INSIDE:
        raise ValueError(f"point {point.tolist()} is not strictly inside simplex {start_simplex}")
    if status != _kernels.OK:
        raise TraversalError(f"{_kernels.STATUS_NAMES[status]}: ray from {point.tolist()} "
                             f"along {side.value} axis {direction_index}, last simplex {last}")
    segs = [SegmentHit(int(s), float(a), float(b), ka, kb)
            for s, a, b, ka, kb in zip(simp, r0, r1, k0, k1)]
    end = float(r1[-1])
    bound = point[direction_index] + (-end if side is Side.LEFT else end)
    return IntegrationPath(point, int(direction_index), side, segs, bound, int(examined))
