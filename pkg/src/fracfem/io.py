"""Writers for matrices, patterns, solutions and tables."""
from __future__ import annotations

import csv

import numpy as np
import scipy.sparse as sp


def write_matrix_market(path, matrix, pattern_only=False, comment=None):
    """Coordinate MatrixMarket, 1-based, rows sorted; values as %.17g.

    ``pattern_only`` writes every stored entry with value 1.
    """
    A = sp.csr_matrix(matrix)
    A.sort_indices()
    coo = A.tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        vals = np.ones(A.nnz) if pattern_only else coo.data
        for r, c, v in zip(coo.row, coo.col, vals):
            fh.write(f"{r + 1} {c + 1} {v:.17g}\n")


def read_matrix_market(path):
    from scipy.io import mmread
    return sp.csr_matrix(mmread(path))


def write_vtk(path, mesh, point_data: dict, title="fracfem solution"):
    """Legacy ASCII unstructured grid with scalar point data."""
    cell_type = 10 if mesh.dim == 3 else 5
    pts = mesh.vertices if mesh.dim == 3 else np.column_stack([mesh.vertices, np.zeros(mesh.num_vertices)])
    n1 = mesh.dim + 1
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.num_vertices} double\n")
        for p in pts:
            fh.write(" ".join("%.17g" % c for c in p) + "\n")
        fh.write(f"CELLS {mesh.num_simplices} {mesh.num_simplices * (n1 + 1)}\n")
        for s in mesh.simplices:
            fh.write(f"{n1} " + " ".join(str(int(v)) for v in s) + "\n")
        fh.write(f"CELL_TYPES {mesh.num_simplices}\n")
        fh.write(f"{cell_type}\n" * mesh.num_simplices)
        fh.write(f"POINT_DATA {mesh.num_vertices}\n")
        for name, vals in point_data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (mesh.num_vertices,):
                raise ValueError(f"point data {name!r} must have one value per vertex")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join("%.17g" % v for v in vals) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
