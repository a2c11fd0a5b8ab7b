"""Riemann-Liouville derivatives of P1 basis functions along traced paths.

For 0 < gamma < 1 the left derivative at x is

    D_L f(x) = 1/Gamma(1-gamma) d/dx_i int_{a_i}^{x_i} (x_i - y)^{-gamma} f(y) dy

and the right derivative carries a factor -1 with the integral running to
b_i.  Split along the mesh, every piece is an integral of a linear function
against a power kernel, so each segment has a closed form.  In terms of the
distances dn < df of the segment ends from the evaluation point both sides
share one formula (the right derivative is the left one of mirrored data).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .raypath import IntegrationPath, Side

#: tolerance for treating a segment end as coincident with the evaluation point
TOUCH_TOL = 1e-12


@dataclass(frozen=True)
class FractionalOrder:
    """Order, side and 0-based axis of a derivative.

    ``gamma == 1`` denotes the classical first derivative, for which no path
    is needed.
    """
    gamma: float
    side: Side = Side.LEFT
    direction_index: int = 0

    def __post_init__(self):
        g = float(self.gamma)
        if not (0.0 < g < 1.0 or g == 1.0):
            raise ValueError(f"order must satisfy 0 < gamma < 1 or gamma == 1, got {g}")
        if int(self.direction_index) < 0:
            raise ValueError("direction index must be non-negative")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "direction_index", int(self.direction_index))

    @property
    def is_classical(self):
        return self.gamma == 1.0

    @property
    def m(self):
        return 1


@dataclass(frozen=True)
class SegmentBasisTrace:
    """A linear basis function restricted to one path segment.

    ``u < v`` are i-th coordinates of the segment ends and ``psi_u``,
    ``psi_v`` the basis values there.
    """
    u: float
    v: float
    psi_u: float
    psi_v: float

    def __post_init__(self):
        if not self.v > self.u:
            raise ValueError(f"segment needs u < v, got u={self.u}, v={self.v}")


def gamma_function(x: float) -> float:
    """Euler Gamma for x > 0."""
    if not x > 0:
        raise ValueError(f"gamma_function needs a positive argument, got {x}")
    return math.gamma(x)


def segment_weights(gamma: float, dn: float, df: float):
    """Weights (wn, wf) with contribution = wn*psi(near) + wf*psi(far).

    ``dn`` and ``df`` are the distances of the near and far segment ends from
    the evaluation point; ``dn == 0`` marks the segment holding the point.
    The factor 1/Gamma(1-gamma) is included.
    """
    return _kernels.backend.segment_weights(gamma, 1.0 / math.gamma(1.0 - gamma), dn, df)


def _distances(order, seg, s):
    """Near/far distances and the matching basis values."""
    if order.side is Side.LEFT:
        return s - seg.v, s - seg.u, seg.psi_v, seg.psi_u
    return seg.u - s, seg.v - s, seg.psi_u, seg.psi_v


def _check_fractional(order):
    if order.is_classical:
        raise ValueError("classical order has no path contribution; use derivative_classical")


def segment_contribution_interior(order: FractionalOrder, seg: SegmentBasisTrace, s: float) -> float:
    """Contribution of a segment that does not contain the evaluation point."""
    _check_fractional(order)
    dn, df, pn, pf = _distances(order, seg, s)
    if dn <= TOUCH_TOL * max(1.0, abs(s)):
        raise ValueError("segment touches the evaluation point; use segment_contribution_terminal")
    wn, wf = segment_weights(order.gamma, dn, df)
    return wn * pn + wf * pf


def segment_contribution_terminal(order: FractionalOrder, seg: SegmentBasisTrace, s: float) -> float:
    """Contribution of the segment ending at the evaluation point."""
    _check_fractional(order)
    dn, df, pn, pf = _distances(order, seg, s)
    if abs(dn) > TOUCH_TOL * max(1.0, abs(s)):
        raise ValueError(f"terminal segment must end at s (gap {dn:.3e})")
    if not df > 0:
        raise ValueError("terminal segment has non-positive length")
    wn, wf = segment_weights(order.gamma, 0.0, df)
    return wn * pn + wf * pf


def _check_path(order, path):
    _check_fractional(order)
    if path.side is not order.side or path.direction_index != order.direction_index:
        raise ValueError(f"path ({path.side.value}, axis {path.direction_index}) does not match "
                         f"order ({order.side.value}, axis {order.direction_index})")


def eval_all_local_basis(order: FractionalOrder, path: IntegrationPath, mesh) -> dict:
    """Contributions keyed by (element_id, local_basis_index) for every
    element crossed by ``path``."""
    _check_path(order, path)
    out = {}
    for seg in path.segments:
        wn, wf = segment_weights(order.gamma, seg.r_min, seg.r_max)
        vals = wn * seg.k_min + wf * seg.k_max
        for j in range(mesh.dim + 1):
            out[(seg.simplex_id, j)] = float(vals[j])
    return out


def eval_fractional_derivative(order: FractionalOrder, path: IntegrationPath, mesh,
                               local_element_id: int, local_basis_index: int) -> float:
    """Derivative at the path origin of the global basis function attached to
    local vertex ``local_basis_index`` of element ``local_element_id``."""
    vertex = int(mesh.simplices[local_element_id, local_basis_index])
    return eval_global_basis(order, path, mesh)[vertex] if vertex in _path_vertices(path, mesh) else 0.0


def _path_vertices(path, mesh):
    return {int(v) for seg in path.segments for v in mesh.simplices[seg.simplex_id]}


def eval_global_basis(order: FractionalOrder, path: IntegrationPath, mesh) -> dict:
    """Contributions summed per global vertex."""
    out = {}
    for (e, j), val in eval_all_local_basis(order, path, mesh).items():
        v = int(mesh.simplices[e, j])
        out[v] = out.get(v, 0.0) + val
    return out


def derivative_classical(mesh, element_id: int, local_basis_index: int, direction_index: int) -> float:
    """Constant partial derivative of a P1 basis function on one element."""
    col = mesh.inverse_jacobians[element_id][:, direction_index]
    if local_basis_index == 0:
        return float(-col.sum())
    return float(col[local_basis_index - 1])


def eval_field(order: FractionalOrder, path: IntegrationPath, mesh, nodal_values) -> float:
    """Derivative of the P1 interpolant with the given nodal values."""
    nodal_values = np.asarray(nodal_values, dtype=float)
    return float(sum(val * nodal_values[v] for v, val in eval_global_basis(order, path, mesh).items()))
