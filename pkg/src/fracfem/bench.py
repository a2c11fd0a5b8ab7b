"""Timing comparisons for the assembly variants.

Pattern-locked accumulation (pattern prediction included in its time)
against a hash-map accumulator converted to CSR afterwards, fractional
against classical assembly, and optionally the compiled against the pure
Python kernels.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

from . import _kernels
from .assembly import assemble, classical_term
from .mesh import generate_cube_mesh
from .problem import cube_problem, weak_form_terms

VARIANTS = ("fractional-pattern", "fractional-hashmap", "classical-pattern")


@dataclass
class BenchRow:
    elements: int
    variant: str
    seconds: float
    nnz: int


def _run(mesh, variant, quadrature_degree, threads, backend):
    kind, mode = variant.split("-")
    if kind == "fractional":
        terms = weak_form_terms(cube_problem(mesh.dim, 0.7))
    else:
        terms = [classical_term(i) for i in range(mesh.dim)]
    t0 = time.perf_counter()
    system = assemble(mesh, terms, quadrature_degree, None, "boundary",
                      threads=threads, mode="pattern" if mode == "pattern" else "hashmap",
                      backend=backend)
    return time.perf_counter() - t0, system.matrix.nnz


def run_benchmark(sizes=(4, 8, 12), dim=3, variants=VARIANTS, quadrature_degree=2,
                  threads=1, backend=None, repeats=3):
    """Best-of-``repeats`` wall time for every (cube size, variant)."""
    rows = []
    for N in sizes:
        mesh = generate_cube_mesh(N, dim)
        for variant in variants:
            best, nnz = float("inf"), 0
            for _ in range(repeats):
                sec, nnz = _run(mesh, variant, quadrature_degree, threads, backend)
                best = min(best, sec)
            rows.append(BenchRow(mesh.num_simplices, variant, best, nnz))
    return rows


def backend_comparison(N=3, dim=3, quadrature_degree=2):
    """Fractional assembly time per available kernel backend."""
    mesh = generate_cube_mesh(N, dim)
    out = {}
    for name in _kernels.available_backends():
        out[name], _ = _run(mesh, "fractional-pattern", quadrature_degree, 1, name)
    return mesh.num_simplices, out


def ranking_checks(rows):
    """Qualitative orderings at the largest mesh: pattern beats hash map,
    fractional costs more than classical."""
    largest = max(r.elements for r in rows)
    t = {r.variant: r.seconds for r in rows if r.elements == largest}
    out = {}
    if {"fractional-pattern", "fractional-hashmap"} <= t.keys():
        out["pattern_faster_than_hashmap"] = t["fractional-pattern"] < t["fractional-hashmap"]
    if {"fractional-pattern", "classical-pattern"} <= t.keys():
        out["fractional_slower_than_classical"] = t["fractional-pattern"] > t["classical-pattern"]
    return out
