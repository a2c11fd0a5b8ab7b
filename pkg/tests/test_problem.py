import csv
import math
from itertools import combinations

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fracfem.assembly import DiscreteSystem, SparsityPattern, assemble, classical_stiffness
from fracfem.mesh import generate_cube_mesh
from fracfem.problem import (COS, ONE_MINUS_COS, ConvergenceRecord, Domain,
                             FractionalDiffusionProblem, PolynomialField, SolverError,
                             ball_problem, constant_coefficient, convergence_study, cube_problem,
                             error_norms, manufactured_rhs, one_sided_derivatives, solve,
                             weak_form_terms, write_convergence_csv)
from oracles import numeric_rhs


def grad_poly(u: PolynomialField):
    """Gradient by differentiating the monomials (for the numeric oracle)."""
    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(u.dim)
        for e, c in zip(u.exps, u.coeffs):
            for i in range(u.dim):
                if e[i]:
                    d = e.copy()
                    d[i] -= 1
                    out[i] += c * e[i] * np.prod(x ** d)
        return out
    return g


def sample_interior(problem, rng, n):
    pts = []
    while len(pts) < n:
        if problem.domain.kind == "cube":
            x = rng.uniform(0.02, 0.98, problem.dim)
        else:
            x = rng.uniform(-0.5, 0.5, problem.dim)
            if np.linalg.norm(x) > 0.47:
                continue
        pts.append(x)
    return pts


def test_weak_form_has_two_terms_per_axis():
    terms = weak_form_terms(cube_problem(3, 0.6))
    assert len(terms) == 6
    signs = [(t.direction_index, t.trial_order.side.value, t.sign, t.test_order.is_classical)
             for t in terms]
    assert signs[:2] == [(0, "left", -1.0, True), (0, "right", 1.0, True)]


def test_terms_independent_of_rhs():
    a = cube_problem(2, 0.6)
    b = cube_problem(2, 0.6)
    b.rhs = lambda x: np.ones(len(x))
    ta, tb = weak_form_terms(a), weak_form_terms(b)
    assert [(t.direction_index, t.trial_order, t.sign) for t in ta] == \
        [(t.direction_index, t.trial_order, t.sign) for t in tb]


def test_classical_limit(cube3):
    prob = cube_problem(3, 1 - 1e-8, "constant")
    K = assemble(cube3, weak_form_terms(prob)).matrix
    ref = classical_stiffness(cube3)
    # the divergence-form operator tends to +Laplacian, i.e. minus the stiffness
    assert abs(K + ref).max() <= 1e-6 * abs(ref).max()


def test_problem_validation():
    with pytest.raises(ValueError):
        cube_problem(3, 1.2)
    with pytest.raises(ValueError):
        FractionalDiffusionProblem(2, Domain("cube"), (0.5,), [COS], [COS])
    with pytest.raises(ValueError):
        cube_problem(2, 0.5, "bogus")


def test_power_rule_derivatives():
    # u = y^2 on [0, 1]: D_L = 2 y^{2-b}/Gamma(3-b)
    u = PolynomialField.from_terms({(2,): 1.0}, 1)
    b, y = 0.4, 0.3
    L, dL, R, dR = one_sided_derivatives(u, np.array([y]), 0, b, 0.0, 1.0)
    assert L == pytest.approx(2 * y ** (2 - b) / math.gamma(3 - b), rel=1e-14)
    assert dL == pytest.approx(2 * (2 - b) * y ** (1 - b) / math.gamma(3 - b), rel=1e-14)
    h = 1e-6
    Rp = one_sided_derivatives(u, np.array([y + h]), 0, b, 0.0, 1.0)[2]
    Rm = one_sided_derivatives(u, np.array([y - h]), 0, b, 0.0, 1.0)[2]
    assert dR == pytest.approx((Rp - Rm) / (2 * h), rel=1e-7)


def _rhs_oracle(problem, x):
    bounds = lambda y, i: tuple(float(v) for v in problem.domain.chord_bounds(y, i))
    return numeric_rhs(problem.exact, grad_poly(problem.exact), problem.p, problem.q, bounds,
                       problem.beta, x)


@pytest.mark.parametrize("problem", [
    FractionalDiffusionProblem(3, Domain("cube"), (0.5, 0.5, 0.5), [constant_coefficient(1)] * 3,
                               [constant_coefficient(0)] * 3,
                               cube_problem(3).exact),
    cube_problem(3, (0.3, 0.6, 0.9)),
    ball_problem((0.8, 0.8, 0.8)),
    ball_problem((0.6, 0.7, 0.8)),
], ids=["cube-p1-q0", "cube-trig", "ball-08", "ball-678"])
def test_rhs_oracle(problem, rng):
    for x in sample_interior(problem, rng, 5):
        ref = _rhs_oracle(problem, x)
        val = float(manufactured_rhs(problem, x))
        assert abs(val - ref) <= 1e-6 * max(abs(ref), 1e-3)


def test_zero_solution_zero_rhs(rng):
    prob = cube_problem(3, 0.5)
    prob.exact = PolynomialField.zero(3)
    x = rng.uniform(0.1, 0.9, (10, 3))
    assert not np.any(manufactured_rhs(prob, x))


def test_rhs_outside_domain():
    with pytest.raises(ValueError):
        manufactured_rhs(ball_problem(), np.array([0.6, 0.0, 0.0]))


def _system(K, b):
    n = K.shape[0]
    v = np.arange(n)
    pat = SparsityPattern(v, K.indptr, K.indices)
    return DiscreteSystem(K.tocsr(), b, v, v, pat)


def test_solve_identity(rng):
    b = rng.normal(size=7)
    np.testing.assert_array_equal(solve(_system(sp.identity(7, format="csr"), b)), b)


def test_solve_iterative_matches_direct():
    mesh = generate_cube_mesh(14, 3)
    K = classical_stiffness(mesh)
    assert K.shape[0] > 2000
    b = np.ones(K.shape[0])
    x, info = solve(_system(K, b), tol=1e-10, return_info=True)
    assert info.method.startswith("gmres") and info.residual <= 1e-10
    ref = spla.spsolve(K.tocsc(), b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_solve_dense_matches_direct(cube3):
    K = classical_stiffness(cube3)
    b = np.linspace(0, 1, K.shape[0])
    x, info = solve(_system(K, b), return_info=True)
    assert info.method == "dense"
    np.testing.assert_allclose(x, spla.spsolve(K.tocsc(), b), rtol=1e-8)


def test_solve_failures(monkeypatch):
    K = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverError, match="diagonal"):
        solve(_system(K, np.ones(2)))

    def no_ilu(*a, **k):
        raise RuntimeError("factor is exactly singular")

    def stalled(K, b, **kw):
        return np.zeros_like(b), 1
    monkeypatch.setattr(spla, "spilu", no_ilu)
    monkeypatch.setattr(spla, "gmres", stalled)
    K = classical_stiffness(generate_cube_mesh(14, 3))
    with pytest.raises(SolverError, match="gmres\\+jacobi stopped at relative residual 1.000e"):
        solve(_system(K, np.ones(K.shape[0])), max_iter=1)


def test_error_norms_exact_linear(cube3):
    u = lambda x: 1 + x[..., 0] - 2 * x[..., 2]
    l2, linf = error_norms(cube3, u(cube3.vertices), u)
    assert l2 <= 1e-14 and linf <= 1e-14


def _monomial(alpha, n):
    """int over a simplex of prod lambda^alpha divided by its volume."""
    return math.prod(math.factorial(a) for a in alpha) * math.factorial(n) / \
        math.factorial(sum(alpha) + n)


def test_error_norms_interpolation_oracle():
    mesh = generate_cube_mesh(4, 3)
    H = np.array([[2.0, 0.5, 0.0], [0.5, 0.0, 0.3], [0.0, 0.3, -2.0]])
    u = lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, H, x) + x[..., 1]
    l2, linf = error_norms(mesh, u(mesh.vertices), u)
    # P1 interpolation error of a quadratic: e = -1/2 sum_{i<j} l_i l_j e_ij^T H e_ij
    pairs = list(combinations(range(4), 2))
    total = 0.0
    for s, vol in zip(mesh.simplices, mesh.volumes):
        V = mesh.vertices[s]
        c = {p: -0.5 * (V[p[0]] - V[p[1]]) @ H @ (V[p[0]] - V[p[1]]) for p in pairs}
        for p in pairs:
            for q in pairs:
                alpha = [0] * 4
                for k in p + q:
                    alpha[k] += 1
                total += c[p] * c[q] * _monomial(alpha, 3) * vol
    assert l2 == pytest.approx(math.sqrt(total), rel=1e-10)
    assert 0 <= l2 <= linf + 1e-14


def test_quadrature_stability():
    prob = cube_problem(3, 0.5)
    e2 = convergence_study(prob, [4], quadrature_degree=2)[0].l2_error
    e3 = convergence_study(prob, [4], quadrature_degree=3)[0].l2_error
    assert abs(e3 - e2) < 0.1 * e2


def test_single_level_study(tmp_path):
    recs = convergence_study(cube_problem(2, 0.7), [4], csv_path=tmp_path / "c.csv")
    assert len(recs) == 1 and recs[0].l2_order is None
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == list(ConvergenceRecord.CSV_COLUMNS)
    assert rows[1][4] == "" and float(rows[1][3]) == recs[0].l2_error


def test_two_level_study_orders(tmp_path):
    recs = convergence_study(cube_problem(2, 0.6), [8, 16])
    assert recs[1].h < recs[0].h
    assert 1.5 <= recs[1].l2_order <= 2.3
    write_convergence_csv(recs, tmp_path / "c.csv")
    assert len(open(tmp_path / "c.csv").read().splitlines()) == 3


def test_levels_must_refine():
    with pytest.raises(ValueError, match="decreasing"):
        convergence_study(cube_problem(2, 0.6), [4, 4])


def test_positivity_guard():
    prob = cube_problem(2, 0.5)
    prob.q = [constant_coefficient(-1.0)] * 2
    with pytest.raises(ValueError, match="not positive"):
        convergence_study(prob, [4])


def test_galerkin_residual(cube3):
    prob = cube_problem(3, 0.7)
    system = assemble(cube3, weak_form_terms(prob), 2, prob.rhs_field())
    x = solve(system, tol=1e-10)
    r = system.matrix @ x - system.rhs
    assert np.abs(r).max() <= 1e-10 * np.linalg.norm(system.rhs)


def test_coefficient_presets():
    t = np.linspace(0, 1, 5)
    np.testing.assert_allclose(COS(t) + ONE_MINUS_COS(t), 1.0)
    np.testing.assert_allclose(ONE_MINUS_COS.df(t), np.sin(t))
