"""Conforming simplicial meshes (triangles in 2-D, tetrahedra in 3-D).

Meshes carry the adjacency the path walker needs: the simplex across each
local face, vertex-to-simplex incidence, and boundary vertex flags.  They are
immutable after construction, so derived arrays are cached on first use.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

EPS_VOL = 1e-12
EPS_FACE = 1e-12


class MeshError(ValueError):
    """Invalid mesh: degenerate simplex, non-conforming face, disconnected."""


class MeshFormatError(MeshError):
    """Parse failure in a ``.node``/``.ele`` file."""

    def __init__(self, path, line, column, message):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {message}")


class SimplicialMesh:
    """Validated simplicial mesh.

    Parameters
    ----------
    vertices : (nv, n) array_like
        Vertex coordinates, n in {2, 3}.
    simplices : (ne, n+1) array_like of int
        Vertex indices of each simplex.  Negatively oriented simplices are
        reordered (last two vertices swapped) so that det A > 0.
    """

    def __init__(self, vertices, simplices, *, check_connected=True):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        simplices = np.array(simplices, dtype=np.int64, copy=True)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError(f"vertices must have shape (nv, 2|3), got {vertices.shape}")
        dim = vertices.shape[1]
        if simplices.ndim != 2 or simplices.shape[1] != dim + 1:
            raise MeshError(f"simplices must have shape (ne, {dim + 1}), got {simplices.shape}")
        if simplices.size and (simplices.min() < 0 or simplices.max() >= len(vertices)):
            raise MeshError("simplex references a vertex index out of range")
        self.dim = dim
        self.vertices = vertices
        jac = self._jacobians(vertices, simplices)
        det = np.linalg.det(jac)
        flip = det < 0
        if flip.any():
            simplices[flip, dim - 1], simplices[flip, dim] = (
                simplices[flip, dim].copy(), simplices[flip, dim - 1].copy())
            jac = self._jacobians(vertices, simplices)
            det = np.linalg.det(jac)
        self.simplices = np.ascontiguousarray(simplices)
        self._check_degenerate(det)
        self.det = det
        self.vertices.setflags(write=False)
        self.simplices.setflags(write=False)
        self._build_faces()
        if check_connected:
            self._check_connected()

    @staticmethod
    def _jacobians(vertices, simplices):
        pts = vertices[simplices]
        return np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))

    def _check_degenerate(self, det):
        pts = self.vertices[self.simplices]
        edges = [np.linalg.norm(pts[:, a] - pts[:, b], axis=1)
                 for a, b in itertools.combinations(range(self.dim + 1), 2)]
        mean_edge = np.mean(edges, axis=0)
        bad = np.flatnonzero(np.abs(det) <= EPS_VOL * mean_edge ** self.dim)
        if bad.size:
            raise MeshError(f"degenerate simplex {int(bad[0])} "
                            f"(|det A| = {abs(det[bad[0]]):.3e}); {bad.size} in total")

    def _build_faces(self):
        n1 = self.dim + 1
        ne = len(self.simplices)
        # local face j is opposite local vertex j
        local = np.array([[k for k in range(n1) if k != j] for j in range(n1)])
        faces = np.sort(self.simplices[:, local], axis=2).reshape(ne * n1, self.dim)
        uniq, inverse, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if counts.max(initial=0) > 2:
            f = uniq[np.argmax(counts)]
            raise MeshError(f"non-conforming mesh: face {tuple(int(v) for v in f)} "
                            f"is shared by {counts.max()} simplices")
        owner = np.repeat(np.arange(ne), n1)
        order = np.argsort(inverse, kind="stable")
        first = np.full(len(uniq), -1, dtype=np.int64)
        second = np.full(len(uniq), -1, dtype=np.int64)
        inv_sorted = inverse[order]
        starts = np.r_[True, inv_sorted[1:] != inv_sorted[:-1]]
        first[inv_sorted[starts]] = owner[order][starts]
        second[inv_sorted[~starts]] = owner[order][~starts]
        slot_owner = owner
        other = np.where(first[inverse] == slot_owner, second[inverse], first[inverse])
        self.neighbors = np.ascontiguousarray(other.reshape(ne, n1))
        self.faces = uniq
        self.face_counts = counts
        self._face_first, self._face_second = first, second
        bnd = np.zeros(len(self.vertices), dtype=np.uint8)
        bnd[uniq[counts == 1].ravel()] = 1
        self.boundary_mask = bnd
        self.neighbors.setflags(write=False)

    def _check_connected(self):
        ne = len(self.simplices)
        if ne <= 1:
            return
        rows = np.repeat(np.arange(ne), self.dim + 1)
        cols = self.neighbors.ravel()
        keep = cols >= 0
        graph = coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(ne, ne))
        ncomp, _ = connected_components(graph, directed=False)
        if ncomp != 1:
            raise MeshError(f"mesh is not connected ({ncomp} components)")

    # -- derived data ------------------------------------------------------
    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_simplices(self):
        return len(self.simplices)

    @cached_property
    def jacobians(self):
        return np.ascontiguousarray(self._jacobians(self.vertices, self.simplices))

    @cached_property
    def inverse_jacobians(self):
        """A^{-1} per simplex; row j maps x - v0 to barycentric k_{j+1}."""
        return np.ascontiguousarray(np.linalg.inv(self.jacobians))

    @cached_property
    def volumes(self):
        return np.abs(self.det) / math.factorial(self.dim)

    @cached_property
    def face_adjacency(self) -> dict:
        """Sorted face vertex tuple -> list of incident simplex ids."""
        out = {}
        for f, a, b in zip(self.faces, self._face_first, self._face_second):
            out[tuple(int(v) for v in f)] = [int(a)] if b < 0 else [int(a), int(b)]
        return out

    @cached_property
    def boundary_vertices(self) -> frozenset:
        return frozenset(np.flatnonzero(self.boundary_mask).tolist())

    @cached_property
    def boundary_faces(self):
        return self.faces[self.face_counts == 1]

    @cached_property
    def _v2s(self):
        ne, n1 = self.simplices.shape
        flat = self.simplices.ravel()
        order = np.argsort(flat, kind="stable")
        idx = np.ascontiguousarray(np.repeat(np.arange(ne), n1)[order], dtype=np.int64)
        ptr = np.zeros(self.num_vertices + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=self.num_vertices), out=ptr[1:])
        return ptr, idx

    def vertex_to_simplices(self, v):
        ptr, idx = self._v2s
        return idx[ptr[v]:ptr[v + 1]]

    @cached_property
    def kernel_arrays(self):
        """Tuple of contiguous arrays consumed by the compiled kernels."""
        ptr, idx = self._v2s
        return (self.vertices, self.simplices, self.inverse_jacobians,
                self.neighbors, ptr, idx, self.boundary_mask)

    @cached_property
    def diameters(self):
        pts = self.vertices[self.simplices]
        return np.max([np.linalg.norm(pts[:, a] - pts[:, b], axis=1)
                       for a, b in itertools.combinations(range(self.dim + 1), 2)], axis=0)

    @property
    def h(self):
        """Maximum element diameter."""
        return float(self.diameters.max())

    @cached_property
    def vertex_adjacency(self):
        """(nv, nv) boolean CSR pattern of vertices sharing a simplex."""
        n1 = self.dim + 1
        rows = np.repeat(self.simplices, n1, axis=1).ravel()
        cols = np.tile(self.simplices, (1, n1)).ravel()
        a = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                       shape=(self.num_vertices,) * 2).tocsr()
        a.sum_duplicates()
        a.data[:] = 1
        return a

    def summary(self):
        return {
            "dim": self.dim,
            "vertices": self.num_vertices,
            "simplices": self.num_simplices,
            "boundary_vertices": int(self.boundary_mask.sum()),
            "h": self.h,
            "volume": float(self.volumes.sum()),
            "min_volume": float(self.volumes.min()),
        }


# -- queries -----------------------------------------------------------------

def barycentric(mesh: SimplicialMesh, simplex_id: int, point) -> np.ndarray:
    """Volume coordinates (k0, ..., kn) of ``point`` in simplex ``simplex_id``."""
    v0 = mesh.vertices[mesh.simplices[simplex_id, 0]]
    k = mesh.inverse_jacobians[simplex_id] @ (np.asarray(point, dtype=float) - v0)
    return np.r_[1.0 - k.sum(), k]


def barycentric_all(mesh: SimplicialMesh, point) -> np.ndarray:
    """Volume coordinates of ``point`` in every simplex, shape (ne, n+1)."""
    v0 = mesh.vertices[mesh.simplices[:, 0]]
    k = np.einsum("eij,ej->ei", mesh.inverse_jacobians, np.asarray(point, dtype=float) - v0)
    return np.column_stack([1.0 - k.sum(axis=1), k])


def locate_point(mesh: SimplicialMesh, point, eps=EPS_FACE) -> int:
    """Exhaustive point location; returns the simplex id or -1 if outside.

    Among containing simplices the one with the largest minimal barycentric
    component wins (most interior).
    """
    k = barycentric_all(mesh, point)
    kmin = k.min(axis=1)
    best = int(np.argmax(kmin))
    return best if kmin[best] >= -eps else -1


@dataclass(frozen=True)
class PatchBounds:
    """Per-vertex coordinate extents of the element patch.

    ``z_min[j, i]`` / ``z_max[j, i]`` bound coordinate i over all simplices
    containing vertex j.
    """

    z_min: np.ndarray
    z_max: np.ndarray


def patch_bounds(mesh: SimplicialMesh) -> PatchBounds:
    pts = mesh.vertices[mesh.simplices]          # (ne, n+1, n)
    emin, emax = pts.min(axis=1), pts.max(axis=1)
    z_min = np.full((mesh.num_vertices, mesh.dim), np.inf)
    z_max = np.full((mesh.num_vertices, mesh.dim), -np.inf)
    for j in range(mesh.dim + 1):
        np.minimum.at(z_min, mesh.simplices[:, j], emin)
        np.maximum.at(z_max, mesh.simplices[:, j], emax)
    return PatchBounds(z_min, z_max)


# -- generators --------------------------------------------------------------

def _kuhn_cube(N, dim, lower, upper):
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    ticks = np.linspace(lower, upper, N + 1)
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    vertices = np.column_stack([g.ravel() for g in grids])
    strides = np.array([(N + 1) ** (dim - 1 - a) for a in range(dim)])
    cells = np.array(list(itertools.product(range(N), repeat=dim)))
    base = cells @ strides
    simplices = []
    for perm in itertools.permutations(range(dim)):
        cols = [base]
        offset = np.zeros(len(cells), dtype=np.int64)
        for axis in perm:
            offset = offset + strides[axis]
            cols.append(base + offset)
        simplices.append(np.column_stack(cols))
    simplices = np.stack(simplices, axis=1).reshape(-1, dim + 1)
    return vertices, simplices


def generate_cube_mesh(N: int, dim: int = 3, lower: float = 0.0, upper: float = 1.0) -> SimplicialMesh:
    """Kuhn (Freudenthal) split of the cube [lower, upper]^dim.

    Each of the N^dim subcubes becomes dim! simplices sharing its main
    diagonal, giving (N+1)^dim vertices.
    """
    vertices, simplices = _kuhn_cube(N, dim, lower, upper)
    return SimplicialMesh(vertices, simplices)


def _radial_map(x, radius):
    sup = np.abs(x).max(axis=1)
    eu = np.linalg.norm(x, axis=1)
    out = x.copy()
    nz = eu > 0
    out[nz] = x[nz] * (sup[nz] / eu[nz])[:, None]
    # boundary vertices land exactly on the sphere
    on_bnd = np.isclose(sup, radius, rtol=0, atol=1e-14 * radius)
    out[on_bnd] *= (radius / np.linalg.norm(out[on_bnd], axis=1))[:, None]
    return out


def _cap_concave_boundary(vertices, simplices):
    """Fill concave folds between boundary triangles with one extra tet each.

    Two boundary triangles sharing an edge whose fold is concave (the far
    vertex of one lies outside the plane of the other) get the tetrahedron
    spanned by their four vertices, which swaps the shared diagonal for the
    convex one.  Repeated until the boundary surface is locally convex.
    """
    for _ in range(10):
        mesh = SimplicialMesh(vertices, simplices, check_connected=False)
        bfaces, owners = _boundary_faces_with_owner(mesh)
        normals, offsets = _outward_planes(mesh, bfaces, owners)
        edge_map = {}
        for fid, f in enumerate(bfaces):
            for a, b in itertools.combinations(sorted(f), 2):
                edge_map.setdefault((a, b), []).append(fid)
        caps = []
        used = set()
        for (a, b), fids in edge_map.items():
            f1, f2 = fids
            far = (set(bfaces[f2]) - {a, b}).pop()
            excess = normals[f1] @ vertices[far] - offsets[f1]
            scale = np.linalg.norm(vertices[a] - vertices[b])
            if excess > 1e-12 * scale and f1 not in used and f2 not in used:
                near = (set(bfaces[f1]) - {a, b}).pop()
                caps.append([a, b, near, far])
                used.update((f1, f2))
        if not caps:
            return vertices, simplices
        simplices = np.vstack([simplices, np.array(caps, dtype=np.int64)])
    raise MeshError("could not make the boundary surface convex")


def _boundary_faces_with_owner(mesh):
    bmask = mesh.neighbors < 0
    owners, local = np.nonzero(bmask)
    n1 = mesh.dim + 1
    faces = np.array([[mesh.simplices[e, k] for k in range(n1) if k != j]
                      for e, j in zip(owners, local)], dtype=np.int64)
    return faces, owners


def _outward_planes(mesh, faces, owners):
    pts = mesh.vertices[faces]
    if mesh.dim == 3:
        n = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    else:
        t = pts[:, 1] - pts[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    centroid = mesh.vertices[mesh.simplices[owners]].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centroid - pts[:, 0]) > 0
    n[flip] *= -1
    return n, np.einsum("ij,ij->i", n, pts[:, 0])


def generate_ball_mesh(N: int, radius: float = 0.5, dim: int = 3) -> SimplicialMesh:
    """Convex simplicial approximation of the ball |x| < radius.

    A Kuhn cube mesh of [-radius, radius]^dim is mapped radially so that a
    vertex at sup-norm distance d from the centre ends at Euclidean distance
    d; boundary vertices land on the sphere.  In 3-D, concave folds of the
    mapped boundary are capped to keep the polyhedron convex.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    vertices, simplices = _kuhn_cube(N, dim, -radius, radius)
    vertices = _radial_map(vertices, radius)
    if dim == 3:
        vertices, simplices = _cap_concave_boundary(vertices, simplices)
    try:
        return SimplicialMesh(vertices, simplices)
    except MeshError as exc:
        raise MeshError(f"{exc}; try a different resolution N") from exc


def is_convex(mesh: SimplicialMesh, tol=1e-12) -> bool:
    """True if every vertex lies on the inner side of every boundary face plane."""
    faces, owners = _boundary_faces_with_owner(mesh)
    n, off = _outward_planes(mesh, faces, owners)
    scale = np.ptp(mesh.vertices, axis=0).max()
    return bool(((mesh.vertices @ n.T) - off).max() <= tol * scale)


# -- .node / .ele files --------------------------------------------------------

def _data_lines(path):
    """Yield (line_number, tokens, token_columns) for non-blank, non-comment lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.split("#", 1)[0]
            toks, cols, pos = [], [], 0
            for tok in text.split():
                pos = text.index(tok, pos)
                toks.append(tok)
                cols.append(pos + 1)
                pos += len(tok)
            if toks:
                yield lineno, toks, cols


def _parse(path, lineno, tok, col, kind, what):
    try:
        return kind(tok)
    except ValueError:
        raise MeshFormatError(path, lineno, col, f"expected {what}, got {tok!r}") from None


def _read_table(path, header_len, row_len, what):
    lines = _data_lines(path)
    try:
        lineno, toks, cols = next(lines)
    except StopIteration:
        raise MeshFormatError(path, 1, 1, "empty file") from None
    if len(toks) < header_len:
        raise MeshFormatError(path, lineno, cols[-1], f"header needs {header_len} fields")
    header = [_parse(path, lineno, t, c, int, "integer") for t, c in zip(toks[:header_len], cols)]
    count = header[0]
    rows, first = [], None
    width = row_len(header)
    for lineno, toks, cols in lines:
        if len(rows) == count:
            raise MeshFormatError(path, lineno, cols[0], f"more than {count} {what} entries")
        if len(toks) < width:
            raise MeshFormatError(path, lineno, cols[-1] + len(toks[-1]),
                                  f"expected {width} fields, got {len(toks)}")
        idx = _parse(path, lineno, toks[0], cols[0], int, "integer index")
        if first is None:
            first = idx
        if idx != first + len(rows):
            raise MeshFormatError(path, lineno, cols[0], f"index {idx} out of sequence")
        rows.append((lineno, toks[1:width], cols[1:width]))
    if len(rows) != count:
        raise MeshFormatError(path, lineno if rows else 1, 1,
                              f"header announces {count} {what} entries, found {len(rows)}")
    return header, rows, first


def load_mesh(node_path, ele_path) -> SimplicialMesh:
    """Read a Triangle/TetGen ``.node``/``.ele`` pair (0- or 1-based)."""
    header, rows, first = _read_table(node_path, 2, lambda h: 1 + h[1], "node")
    dim = header[1]
    if dim not in (2, 3):
        raise MeshFormatError(node_path, 1, 1, f"dimension must be 2 or 3, got {dim}")
    verts = np.array([[_parse(node_path, ln, t, c, float, "number") for t, c in zip(toks, cols)]
                      for ln, toks, cols in rows], dtype=float).reshape(-1, dim)
    eheader, erows, _ = _read_table(ele_path, 2, lambda h: 1 + h[1], "element")
    if eheader[1] != dim + 1:
        raise MeshFormatError(ele_path, 1, 1, f"expected {dim + 1} nodes per simplex, got {eheader[1]}")
    simp = []
    for ln, toks, cols in erows:
        row = []
        for t, c in zip(toks, cols):
            v = _parse(ele_path, ln, t, c, int, "vertex index") - first
            if not 0 <= v < len(verts):
                raise MeshFormatError(ele_path, ln, c, f"vertex index {t} out of range")
            row.append(v)
        simp.append(row)
    return SimplicialMesh(verts, np.array(simp, dtype=np.int64).reshape(-1, dim + 1))


def save_mesh(mesh: SimplicialMesh, node_path, ele_path, base: int = 1):
    """Write ``.node``/``.ele`` files; coordinates round-trip exactly."""
    with open(node_path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.dim} 0 1\n")
        for k, (x, b) in enumerate(zip(mesh.vertices, mesh.boundary_mask)):
            fh.write(f"{k + base} " + " ".join("%.17g" % c for c in x) + f" {int(b)}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{mesh.num_simplices} {mesh.dim + 1} 0\n")
        for k, s in enumerate(mesh.simplices):
            fh.write(f"{k + base} " + " ".join(str(int(v) + base) for v in s) + "\n")
