"""Steady fractional diffusion with variable coefficients.

    sum_i d_i ( p_i D_L^{beta_i} u - q_i D_R^{beta_i} u ) = f   in Omega,
    u = 0 outside Omega,

on the unit cube or a ball, with manufactured polynomial solutions.  The
weak form integrates the outer derivative by parts onto the test function,
so the trial side is fractional and the test side classical.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy.special import binom, rgamma

from .assembly import DiscreteSystem, OperatorTerm, assemble
from .fracops import FractionalOrder
from .io import write_vtk
from .mesh import SimplicialMesh, generate_ball_mesh, generate_cube_mesh
from .quadrature import quadrature_rule
from .raypath import Side

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    pass


# -- fields -------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialField:
    """sum_k coeff_k prod_j x_j^{exps[k, j]}."""
    exps: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_terms(cls, terms: dict, dim: int):
        exps = np.array(list(terms.keys()), dtype=np.int64).reshape(-1, dim)
        return cls(exps, np.array(list(terms.values()), dtype=float))

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((0, dim), dtype=np.int64), np.zeros(0))

    def __mul__(self, other):
        out = {}
        for e1, c1 in zip(self.exps, self.coeffs):
            for e2, c2 in zip(other.exps, other.coeffs):
                k = tuple(int(a) for a in e1 + e2)
                out[k] = out.get(k, 0.0) + c1 * c2
        return PolynomialField.from_terms(out, self.exps.shape[1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        mon = np.prod(x[..., None, :] ** self.exps, axis=-1)
        return mon @ self.coeffs

    @property
    def dim(self):
        return self.exps.shape[1]

    def chord_coefficients(self, x, axis):
        """Coefficients c[..., m] of u(x with x_axis -> y) as a polynomial
        in y, at each point of ``x``."""
        x = np.asarray(x, dtype=float)
        deg = int(self.exps[:, axis].max(initial=0))
        other = self.exps.copy()
        other[:, axis] = 0
        mon = np.prod(x[..., None, :] ** other, axis=-1) * self.coeffs
        c = np.zeros(x.shape[:-1] + (deg + 1,))
        for k, m in enumerate(self.exps[:, axis]):
            c[..., m] += mon[..., k]
        return c


def product_bubble(dim):
    """prod_i x_i (1 - x_i)."""
    u = PolynomialField.from_terms({(0,) * dim: 1.0}, dim)
    for i in range(dim):
        e1 = [0] * dim
        e2 = [0] * dim
        e1[i], e2[i] = 1, 2
        u = u * PolynomialField.from_terms({tuple(e1): 1.0, tuple(e2): -1.0}, dim)
    return u


def ball_bubble(dim, radius):
    """(|x|^2 - r^2)^2."""
    terms = {(0,) * dim: -radius ** 2}
    for i in range(dim):
        e = [0] * dim
        e[i] = 2
        terms[tuple(e)] = 1.0
    s = PolynomialField.from_terms(terms, dim)
    return s * s


@dataclass(frozen=True)
class AxisCoefficient:
    """Coefficient depending on x_i only, with its derivative."""
    name: str
    f: Callable
    df: Callable

    def __call__(self, x):
        return self.f(x)


def constant_coefficient(value):
    v = float(value)
    return AxisCoefficient(f"{v:g}", lambda t: np.full_like(t, v, dtype=float),
                           lambda t: np.zeros_like(t, dtype=float))


COS = AxisCoefficient("cos", np.cos, lambda t: -np.sin(t))
ONE_MINUS_COS = AxisCoefficient("1-cos", lambda t: 1.0 - np.cos(t), np.sin)


# -- problem ------------------------------------------------------------------

@dataclass
class Domain:
    kind: str            # 'cube' or 'ball'
    lower: float = 0.0
    upper: float = 1.0
    radius: float = 0.5

    def chord_bounds(self, x, axis):
        x = np.asarray(x, dtype=float)
        if self.kind == "cube":
            shape = x.shape[:-1]
            return np.full(shape, self.lower), np.full(shape, self.upper)
        rest = (x ** 2).sum(axis=-1) - x[..., axis] ** 2
        w = np.sqrt(np.maximum(self.radius ** 2 - rest, 0.0))
        return -w, w

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        if self.kind == "cube":
            return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)
        return (x ** 2).sum(axis=-1) <= (self.radius + tol) ** 2

    def mesh(self, N, dim):
        if self.kind == "cube":
            return generate_cube_mesh(N, dim, self.lower, self.upper)
        return generate_ball_mesh(N, self.radius, dim)


@dataclass
class FractionalDiffusionProblem:
    dim: int
    domain: Domain
    beta: tuple
    p: Sequence[AxisCoefficient]
    q: Sequence[AxisCoefficient]
    exact: PolynomialField | None = None
    rhs: Callable | None = None

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != self.dim or len(self.p) != self.dim or len(self.q) != self.dim:
            raise ValueError("beta, p and q need one entry per dimension")
        for b in self.beta:
            if not 0.0 < b < 1.0:
                raise ValueError(f"orders must lie in (0, 1), got {b}")
        if self.exact is not None and self.exact.dim != self.dim:
            raise ValueError("exact solution dimension mismatch")

    def rhs_field(self):
        if self.rhs is not None:
            return self.rhs
        if self.exact is None:
            return None
        return lambda x: manufactured_rhs(self, x)

    def check_coefficients(self, points):
        """Raise unless every p_i, q_i is positive at ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        for i in range(self.dim):
            for name, c in (("p", self.p[i]), ("q", self.q[i])):
                vals = c(pts[:, i])
                if not np.all(vals > 0):
                    bad = pts[np.argmin(vals)]
                    raise ValueError(f"coefficient {name}_{i} = {vals.min():.3e} is not positive "
                                     f"at {bad.tolist()}")


def cube_problem(dim=3, beta=0.5, coefficients="trig"):
    """Unit cube with u = prod x_i(1-x_i)."""
    beta = (beta,) * dim if np.isscalar(beta) else tuple(beta)
    if coefficients == "trig":
        p, q = [COS] * dim, [ONE_MINUS_COS] * dim
    elif coefficients == "constant":
        p, q = [constant_coefficient(0.5)] * dim, [constant_coefficient(0.5)] * dim
    else:
        raise ValueError(f"unknown coefficient preset {coefficients!r}")
    return FractionalDiffusionProblem(dim, Domain("cube"), beta, p, q, product_bubble(dim))


def ball_problem(beta=(0.8, 0.8, 0.8), radius=0.5, dim=3):
    """Ball centred at the origin, u = (|x|^2 - r^2)^2, p = cos, q = 1 - cos."""
    beta = (beta,) * dim if np.isscalar(beta) else tuple(beta)
    return FractionalDiffusionProblem(dim, Domain("ball", radius=radius), beta,
                                      [COS] * dim, [ONE_MINUS_COS] * dim, ball_bubble(dim, radius))


PRESETS = {"cube": cube_problem, "ball": ball_problem}


def weak_form_terms(problem: FractionalDiffusionProblem):
    """-(p_i D_L u, d_i v) + (q_i D_R u, d_i v) for every axis."""
    terms = []
    for i, b in enumerate(problem.beta):
        test = FractionalOrder(1.0, Side.LEFT, i)
        p, q = problem.p[i], problem.q[i]
        terms.append(OperatorTerm(i, FractionalOrder(b, Side.LEFT, i), test,
                                  lambda x, c=p, i=i: c(x[..., i]), -1.0))
        terms.append(OperatorTerm(i, FractionalOrder(b, Side.RIGHT, i), test,
                                  lambda x, c=q, i=i: c(x[..., i]), 1.0))
    return terms


# -- manufactured right-hand side --------------------------------------------

def _shift(c, a):
    """Coefficients of sum_m c_m y^m in powers of (y - a)."""
    deg = c.shape[-1] - 1
    out = np.zeros_like(c)
    for k in range(deg + 1):
        for m in range(k, deg + 1):
            out[..., k] += c[..., m] * binom(m, k) * a ** (m - k)
    return out


def one_sided_derivatives(u: PolynomialField, x, axis, beta, lo, hi):
    """D_L, d_i D_L, D_R, d_i D_R of ``u`` at ``x`` along ``axis`` for
    chord bounds ``lo``, ``hi`` (power rule on the shifted polynomial)."""
    x = np.asarray(x, dtype=float)
    c = u.chord_coefficients(x, axis)
    xi = x[..., axis]
    t = xi - lo
    s = hi - xi
    dl = _shift(c, lo)
    dr = _shift(c, hi) * (-1.0) ** np.arange(c.shape[-1])
    L = dL = R = dR = 0.0
    for k in range(c.shape[-1]):
        g0 = math.gamma(k + 1) * rgamma(k + 1 - beta)
        g1 = math.gamma(k + 1) * rgamma(k - beta)
        L = L + dl[..., k] * g0 * t ** (k - beta)
        dL = dL + dl[..., k] * g1 * t ** (k - beta - 1)
        R = R + dr[..., k] * g0 * s ** (k - beta)
        dR = dR - dr[..., k] * g1 * s ** (k - beta - 1)
    return L, dL, R, dR


def manufactured_rhs(problem: FractionalDiffusionProblem, x):
    """f = sum_i d_i (p_i D_L u - q_i D_R u) in closed form."""
    if problem.exact is None:
        raise ValueError("problem has no exact solution")
    x = np.asarray(x, dtype=float)
    if not np.all(problem.domain.contains(x)):
        raise ValueError("manufactured_rhs evaluated outside the domain")
    f = np.zeros(x.shape[:-1])
    for i, b in enumerate(problem.beta):
        lo, hi = problem.domain.chord_bounds(x, i)
        L, dL, R, dR = one_sided_derivatives(problem.exact, x, i, b, lo, hi)
        xi = x[..., i]
        p, q = problem.p[i], problem.q[i]
        f += p.df(xi) * L + p(xi) * dL - q.df(xi) * R - q(xi) * dR
    return f


# -- solve and errors ---------------------------------------------------------

@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float


def solve(system: DiscreteSystem, tol: float = 1e-10, max_iter: int = 2000,
          return_info: bool = False):
    """Solve K x = F to relative residual ``tol``.

    Dense LU up to DENSE_LIMIT unknowns, otherwise restarted GMRES with an
    incomplete LU preconditioner (Jacobi if the factorisation fails).
    """
    K, b = system.matrix, system.rhs
    n = K.shape[0]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x = np.zeros(n)
        info = SolveInfo("trivial", 0, 0.0)
        return (x, info) if return_info else x
    diag = K.diagonal()
    if np.any(diag == 0.0):
        raise SolverError(f"zero diagonal entry at row {int(np.flatnonzero(diag == 0.0)[0])}")
    if n <= DENSE_LIMIT:
        x = scipy.linalg.solve(K.toarray(), b)
        method, its = "dense", 1
    else:
        try:
            ilu = spla.spilu(K.tocsc(), drop_tol=1e-4, fill_factor=4)
            M = spla.LinearOperator(K.shape, ilu.solve)
            method = "gmres+ilu"
        except RuntimeError:
            M = spla.LinearOperator(K.shape, lambda r: r / diag)
            method = "gmres+jacobi"
        its = [0]

        def count(_):
            its[0] += 1
        x, flag = spla.gmres(K, b, rtol=tol * 0.1, atol=0.0, restart=100, maxiter=max_iter,
                             M=M, callback=count, callback_type="pr_norm")
        its = its[0]
    res = float(np.linalg.norm(K @ x - b)) / bnorm
    if not res <= tol:
        raise SolverError(f"{method} stopped at relative residual {res:.3e} (tol {tol:.1e})")
    info = SolveInfo(method, its, res)
    return (x, info) if return_info else x


def error_norms(mesh: SimplicialMesh, nodal, exact: Callable, degree: int = 4):
    """(L2, Linf) of u_h - u; Linf over quadrature points and vertices."""
    quad = quadrature_rule(mesh.dim, degree)
    nodal = np.asarray(nodal, dtype=float)
    pts = quad.physical_points(mesh)
    uh = nodal[mesh.simplices] @ quad.points.T           # (ne, nq)
    err = uh - exact(pts.reshape(-1, mesh.dim)).reshape(uh.shape)
    l2 = math.sqrt(float((quad.physical_weights(mesh) * err ** 2).sum()))
    linf = max(float(np.abs(err).max()),
               float(np.abs(nodal - exact(mesh.vertices)).max()))
    return l2, linf


# -- convergence study --------------------------------------------------------

@dataclass
class ConvergenceRecord:
    level: int
    h: float
    num_dofs: int
    l2_error: float
    linf_error: float
    l2_order: float | None = None
    linf_order: float | None = None
    assembly_seconds: float = 0.0
    solve_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    CSV_COLUMNS = ("level", "h", "num_dofs", "l2_error", "l2_order", "linf_error",
                   "linf_order", "assembly_seconds", "solve_seconds")

    def csv_row(self):
        fmt = lambda v: "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, c)) for c in self.CSV_COLUMNS]


def _order(e0, e1, h0, h1):
    return math.log(e0 / e1) / math.log(h0 / h1)


def convergence_study(problem: FractionalDiffusionProblem, mesh_levels, quadrature_degree: int = 2,
                      tol: float = 1e-10, *, threads: int = 1, csv_path=None, max_iter: int = 2000,
                      progress: Callable | None = None, vtk_dir=None):
    """Assemble, solve and measure errors on each level.

    ``mesh_levels`` holds meshes or subdivision counts for the problem's
    domain generator.  With ``vtk_dir`` every level's discrete and exact
    solutions are written to ``solution_level<k>.vtk`` there.
    """
    if problem.exact is None:
        raise ValueError("convergence study needs an exact solution")
    records = []
    terms = weak_form_terms(problem)
    quad = quadrature_rule(problem.dim, quadrature_degree)
    for level, spec in enumerate(mesh_levels):
        mesh = spec if isinstance(spec, SimplicialMesh) else problem.domain.mesh(int(spec), problem.dim)
        problem.check_coefficients(quad.physical_points(mesh))
        t0 = time.perf_counter()
        system = assemble(mesh, terms, quad, problem.rhs_field(), "boundary", threads=threads)
        t1 = time.perf_counter()
        x, info = solve(system, tol, max_iter, return_info=True)
        t2 = time.perf_counter()
        nodal = system.expand(x)
        l2, linf = error_norms(mesh, nodal, problem.exact)
        if vtk_dir is not None:
            write_vtk(Path(vtk_dir) / f"solution_level{level}.vtk", mesh,
                      {"u_h": nodal, "u": problem.exact(mesh.vertices)})
        rec = ConvergenceRecord(level, mesh.h, system.num_dofs, l2, linf,
                                assembly_seconds=t1 - t0, solve_seconds=t2 - t1,
                                extra={"simplices": mesh.num_simplices, "nnz": system.matrix.nnz,
                                       "solver": info.method, "iterations": info.iterations,
                                       "residual": info.residual})
        if records:
            prev = records[-1]
            if not rec.h < prev.h:
                raise ValueError("mesh levels must have strictly decreasing h")
            rec.l2_order = _order(prev.l2_error, l2, prev.h, rec.h)
            rec.linf_order = _order(prev.linf_error, linf, prev.h, rec.h)
        records.append(rec)
        log.info("level %d: h=%.4g dofs=%d L2=%.3e Linf=%.3e (assembly %.1fs, solve %.1fs)",
                 level, rec.h, rec.num_dofs, l2, linf, rec.assembly_seconds, rec.solve_seconds)
        if progress is not None:
            progress(rec)
    if csv_path is not None:
        write_convergence_csv(records, csv_path)
    return records


def write_convergence_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ConvergenceRecord.CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())
