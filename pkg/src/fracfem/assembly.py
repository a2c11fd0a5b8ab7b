"""Global stiffness and load assembly for fractional bilinear forms.

Each term contributes sum_q w_q c(x_q) D_trial psi_l(x_q) D_test psi_k(x_q)
at row k (test) and column l (trial).  Fractional values come from paths
traced from every quadrature point; classical values are constant per
element.  The sparsity pattern is predicted from vertex patch extents and
fixed before any value is written.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .fracops import FractionalOrder
from .mesh import PatchBounds, SimplicialMesh, patch_bounds
from .quadrature import QuadratureRule, quadrature_rule
from .raypath import Side

log = logging.getLogger(__name__)


class PatternError(RuntimeError):
    """An assembled entry fell outside the predicted pattern."""


@dataclass(frozen=True)
class OperatorTerm:
    """One bilinear term sign * (c D_trial u, D_test v) along one axis.

    ``coefficient`` is a float or a callable taking an (m, dim) array of
    points and returning m values.
    """
    direction_index: int
    trial_order: FractionalOrder
    test_order: FractionalOrder
    coefficient: float | Callable = 1.0
    sign: float = 1.0

    def __post_init__(self):
        i = int(self.direction_index)
        for o in (self.trial_order, self.test_order):
            if o.direction_index != i:
                raise ValueError(f"order axis {o.direction_index} differs from term axis {i}")
        tr, te = self.trial_order, self.test_order
        if not (tr.is_classical or te.is_classical) and tr.side is te.side:
            raise ValueError("fractional trial and test orders must act from opposite sides")
        total = tr.gamma + te.gamma
        if not 1.0 < total <= 2.0:
            raise ValueError(f"trial + test order must lie in (1, 2], got {total}")
        if self.sign not in (1, -1, 1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        object.__setattr__(self, "direction_index", i)

    @property
    def is_classical(self):
        return self.trial_order.is_classical and self.test_order.is_classical

    def evaluate_coefficient(self, points):
        pts = np.asarray(points, dtype=float)
        if callable(self.coefficient):
            vals = np.asarray(self.coefficient(pts), dtype=float)
            return np.broadcast_to(vals, pts.shape[:-1]).copy()
        return np.full(pts.shape[:-1], float(self.coefficient))


def classical_term(direction_index, coefficient=1.0, sign=1.0):
    """(c d_i u, d_i v)."""
    o = FractionalOrder(1.0, Side.LEFT, direction_index)
    return OperatorTerm(direction_index, o, o, coefficient, sign)


@dataclass
class SparsityPattern:
    """Boolean CSR pattern over ``vertices`` (local index = position)."""
    vertices: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def shape(self):
        n = len(self.vertices)
        return (n, n)

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def density(self):
        n = len(self.vertices)
        return self.nnz / float(n * n) if n else 0.0

    def to_csr(self, dtype=np.int8):
        data = np.ones(self.nnz, dtype=dtype)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def contains(self, row, col):
        lo, hi = self.indptr[row], self.indptr[row + 1]
        pos = lo + np.searchsorted(self.indices[lo:hi], col)
        return bool(pos < hi and self.indices[pos] == col)


def build_sparsity_pattern(mesh: SimplicialMesh, bounds: PatchBounds | None,
                           terms, vertices=None, backend=None) -> SparsityPattern:
    """Predict which (test, trial) vertex pairs can interact.

    A path along axis i meets only simplices whose other coordinates match
    those of its start point, so a pair can interact through an axis-i term
    only if their patch extents overlap in every coordinate except i.
    Overlap is strict: quadrature points are interior, so touching extents
    never produce a positive-length contribution.  Classical terms add the
    vertex adjacency, which is always included.
    """
    if bounds is None:
        bounds = patch_bounds(mesh)
    vertices = (np.arange(mesh.num_vertices) if vertices is None
                else np.asarray(vertices, dtype=np.int64))
    n = len(vertices)
    adj = mesh.vertex_adjacency[vertices][:, vertices].tocsr()
    adj.sort_indices()
    axes = np.array(sorted({t.direction_index for t in terms if not t.is_classical}), dtype=np.int64)
    if not axes.size:
        return SparsityPattern(vertices, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))
    lo = np.ascontiguousarray(bounds.z_min[vertices])
    hi = np.ascontiguousarray(bounds.z_max[vertices])
    order = np.ascontiguousarray(np.argsort(lo, axis=0, kind="stable").T).astype(np.int64)
    skey = np.ascontiguousarray(np.take_along_axis(lo, order.T, axis=0).T)
    maxw = np.ascontiguousarray((hi - lo).max(axis=0)) if n else np.zeros(mesh.dim)
    indptr, indices = _kernels.get_backend(backend).pattern_rows(
        lo, hi, axes, order, skey, maxw, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))
    return SparsityPattern(vertices, indptr, indices)


@dataclass
class DiscreteSystem:
    """Assembled K u = F over the free vertices."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray          # vertex -> free index, -1 if constrained
    free_vertices: np.ndarray    # free index -> vertex
    pattern: SparsityPattern
    timings: dict = field(default_factory=dict)
    examined: int = 0

    @property
    def num_dofs(self):
        return len(self.free_vertices)

    def expand(self, x):
        """Nodal vector over all vertices (zero on constrained ones)."""
        full = np.zeros(len(self.dof_map))
        full[self.free_vertices] = x
        return full


def _resolve_quadrature(mesh, quadrature):
    if quadrature is None:
        return quadrature_rule(mesh.dim, 2)
    if isinstance(quadrature, QuadratureRule):
        if quadrature.dim != mesh.dim:
            raise ValueError("quadrature dimension does not match the mesh")
        return quadrature
    return quadrature_rule(mesh.dim, int(quadrature))


def _dof_map(mesh, dirichlet):
    """``dirichlet``: 'boundary' (homogeneous on all boundary vertices),
    None (no constraint), or a boolean vertex mask of constrained vertices."""
    if dirichlet is None:
        fixed = np.zeros(mesh.num_vertices, dtype=bool)
    elif isinstance(dirichlet, str):
        if dirichlet != "boundary":
            raise ValueError(f"unknown boundary condition {dirichlet!r}")
        fixed = mesh.boundary_mask.astype(bool)
    else:
        fixed = np.asarray(dirichlet, dtype=bool)
        if fixed.shape != (mesh.num_vertices,):
            raise ValueError("dirichlet mask must have one entry per vertex")
    free = np.flatnonzero(~fixed).astype(np.int64)
    dof = np.full(mesh.num_vertices, -1, dtype=np.int64)
    dof[free] = np.arange(len(free))
    return dof, free


def _term_tables(terms):
    keys = []
    def key_of(order):
        if order.is_classical:
            return -1
        k = (order.direction_index, order.side.code)
        if k not in keys:
            keys.append(k)
        return keys.index(k)
    t_axis = np.array([t.direction_index for t in terms], dtype=np.int64)
    t_sign = np.array([float(t.sign) for t in terms])
    t_trial_key = np.array([key_of(t.trial_order) for t in terms], dtype=np.int64)
    t_test_key = np.array([key_of(t.test_order) for t in terms], dtype=np.int64)
    t_trial_g = np.array([t.trial_order.gamma for t in terms])
    t_test_g = np.array([t.test_order.gamma for t in terms])
    path_keys = np.array(keys, dtype=np.int64).reshape(-1, 2)
    return t_axis, t_sign, t_trial_g, t_trial_key, t_test_g, t_test_key, path_keys


def load_vector(mesh, rhs_field, quad, dof, nfree):
    """(f, psi_k) by quadrature with f sampled at the quadrature points."""
    F = np.zeros(nfree)
    if rhs_field is None:
        return F
    pts = quad.physical_points(mesh)
    fvals = np.asarray(rhs_field(pts.reshape(-1, mesh.dim)), dtype=float).reshape(pts.shape[:2])
    wq = quad.physical_weights(mesh)
    local = np.einsum("eq,eq,qj->ej", fvals, wq, quad.points)
    rows = dof[mesh.simplices]
    keep = rows >= 0
    np.add.at(F, rows[keep], local[keep])
    return F


def _raise_status(status, info, nfree, pattern):
    if status == _kernels.PATTERN_MISS:
        r, c = divmod(int(info), nfree)
        raise PatternError(f"contribution at (vertex {pattern.vertices[r]}, vertex "
                           f"{pattern.vertices[c]}) lies outside the predicted pattern")
    from .raypath import TraversalError
    raise TraversalError(f"{_kernels.STATUS_NAMES[status]} during assembly (simplex {info})")


def assemble(mesh: SimplicialMesh, terms, quadrature=None, rhs_field=None,
             dirichlet="boundary", *, pattern: SparsityPattern | None = None,
             threads: int = 1, mode: str = "pattern", backend=None) -> DiscreteSystem:
    """Assemble the stiffness matrix of ``terms`` and the load vector.

    Parameters
    ----------
    quadrature : QuadratureRule, int or None
        Rule or degree (default 2).
    rhs_field : callable or None
        f(points) with points of shape (m, dim).
    dirichlet : 'boundary', None or bool mask
        Constrained vertices are removed from rows and columns.
    threads : int
        Element chunks run concurrently, each into its own buffer; buffers
        are summed in chunk order so the result does not depend on timing.
    mode : {'pattern', 'hashmap'}
        'pattern' writes into the preallocated CSR arrays; 'hashmap'
        accumulates in a hash table and converts afterwards (baseline).
    """
    terms = list(terms)
    if not terms:
        raise ValueError("no operator terms given")
    if mode not in ("pattern", "hashmap"):
        raise ValueError(f"unknown accumulation mode {mode!r}")
    kern = _kernels.get_backend(backend)
    quad = _resolve_quadrature(mesh, quadrature)
    dof, free = _dof_map(mesh, dirichlet)
    nfree = len(free)
    timings = {}

    t0 = time.perf_counter()
    if mode == "hashmap":
        # no prediction: the hash map discovers the structure as it goes
        pattern = SparsityPattern(free, np.zeros(nfree + 1, dtype=np.int64), np.zeros(0, np.int64))
    elif pattern is None:
        pattern = build_sparsity_pattern(mesh, patch_bounds(mesh), terms, free, backend)
    elif not np.array_equal(pattern.vertices, free):
        raise ValueError("pattern vertex set does not match the free vertices")
    timings["pattern"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pts = quad.physical_points(mesh)
    coef = np.ascontiguousarray(np.stack([t.evaluate_coefficient(pts) for t in terms], axis=-1))
    tables = _term_tables(terms)
    absdet = np.ascontiguousarray(np.abs(mesh.det))
    qbary = np.ascontiguousarray(quad.points)
    qw = np.ascontiguousarray(quad.weights)
    ne = mesh.num_simplices
    nchunk = max(1, min(int(threads), ne))
    bounds_ = np.linspace(0, ne, nchunk + 1).astype(np.int64)
    imode = 0 if mode == "pattern" else 1

    def run(c):
        buf = np.zeros(pattern.nnz)
        out = kern.assemble_chunk(mesh.kernel_arrays, absdet, int(bounds_[c]), int(bounds_[c + 1]),
                                  qbary, qw, coef, *tables, dof, pattern.indptr, pattern.indices,
                                  buf, imode)
        return out, buf

    if nchunk == 1:
        results = [run(0)]
    else:
        with ThreadPoolExecutor(max_workers=nchunk) as pool:
            results = list(pool.map(run, range(nchunk)))
    examined = 0
    for (status, info, ex, _), _ in results:
        examined += ex
        if status != _kernels.OK:
            _raise_status(status, info, nfree, pattern)
    if imode == 0:
        data = results[0][1]
        for _, buf in results[1:]:
            data += buf
        K = sp.csr_matrix((data, pattern.indices.copy(), pattern.indptr.copy()), shape=(nfree, nfree))
    else:
        K = sp.csr_matrix((nfree, nfree))
        for (_, _, _, (keys, vals)), _ in results:
            r, c = np.divmod(keys, nfree)
            K = K + sp.csr_matrix((vals, (r, c)), shape=(nfree, nfree))
        K.sort_indices()
        pattern = SparsityPattern(free, K.indptr.astype(np.int64), K.indices.astype(np.int64))
    timings["matrix"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    F = load_vector(mesh, rhs_field, quad, dof, nfree)
    timings["rhs"] = time.perf_counter() - t0
    log.info("assembled %d dofs, nnz %d, %.2fs (pattern %.2fs)", nfree, K.nnz,
             timings["matrix"], timings["pattern"])
    return DiscreteSystem(K, F, dof, free, pattern, timings, examined)


def classical_stiffness(mesh: SimplicialMesh, dirichlet="boundary"):
    """Textbook P1 Laplacian stiffness, vectorised (independent reference)."""
    dof, free = _dof_map(mesh, dirichlet)
    inv = mesh.inverse_jacobians                 # (ne, n, n)
    g = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)  # (ne, n+1, n)
    local = np.einsum("ejd,ekd->ejk", g, g) * mesh.volumes[:, None, None]
    n1 = mesh.dim + 1
    rows = np.repeat(mesh.simplices, n1, axis=1).ravel()
    cols = np.tile(mesh.simplices, (1, n1)).ravel()
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.num_vertices,) * 2)
    return K[free][:, free].tocsr()


def matrix_stats(system: DiscreteSystem, rel_zero: float = 1e-14) -> dict:
    """Structural nnz, density, numerically nonzero share and symmetry defect."""
    K = system.matrix
    n = K.shape[0]
    amax = float(np.abs(K.data).max()) if K.nnz else 0.0
    nonzero = int((np.abs(K.data) > rel_zero * amax).sum()) if amax else 0
    asym = abs(K - K.T)
    return {
        "num_dofs": n,
        "nnz": int(K.nnz),
        "density": K.nnz / float(n * n) if n else 0.0,
        "numeric_nonzero": nonzero,
        "pattern_fill": nonzero / K.nnz if K.nnz else math.nan,
        "symmetry_defect": float(asym.max()) if asym.nnz else 0.0,
    }
