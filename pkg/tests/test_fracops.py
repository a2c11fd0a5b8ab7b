import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_interior_point
from fracfem import _kernels
from fracfem.fracops import (FractionalOrder, SegmentBasisTrace, derivative_classical,
                             eval_all_local_basis, eval_fractional_derivative, eval_field,
                             eval_global_basis, gamma_function, segment_contribution_interior,
                             segment_contribution_terminal, segment_weights)
from fracfem.mesh import SimplicialMesh, barycentric, generate_cube_mesh
from fracfem.raypath import trace_path
from oracles import _rl_one_sided, kernel_quadrature, kernel_terminal_quadrature

LEFT = FractionalOrder(0.5, "left", 0)


def _seg(u, v, c0, c1):
    return SegmentBasisTrace(u, v, c0, c0 + c1 * (v - u))


@pytest.mark.parametrize("x,val", [(1.0, 1.0), (0.5, 1.7724538509055159),
                                   (1.5, 0.886226925452758)])
def test_gamma_values(x, val):
    assert gamma_function(x) == pytest.approx(val, rel=1e-12)


def test_gamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        gamma_function(0.0)


@pytest.mark.parametrize("g", [0.0, -0.2, 1.2, 0.9999 + 1.0])
def test_order_range(g):
    with pytest.raises(ValueError):
        FractionalOrder(g)


def test_order_fields():
    o = FractionalOrder(1.0, "right", 2)
    assert o.is_classical and o.m == 1 and o.direction_index == 2


def test_segment_requires_increasing_ends():
    with pytest.raises(ValueError):
        SegmentBasisTrace(0.5, 0.5, 0.0, 1.0)


def test_interior_zero_basis():
    assert segment_contribution_interior(LEFT, SegmentBasisTrace(0.0, 0.5, 0.0, 0.0), 1.0) == 0.0


def test_interior_matches_quadrature():
    ref = kernel_quadrature(0.5, 0.0, 0.5, 1.0, 0.0, 1.0)
    val = segment_contribution_interior(LEFT, _seg(0.0, 0.5, 0.0, 1.0), 1.0)
    assert val == pytest.approx(ref, rel=1e-10)


def test_interior_additivity():
    whole = segment_contribution_interior(LEFT, _seg(0.0, 0.5, 0.0, 1.0), 1.0)
    parts = (segment_contribution_interior(LEFT, _seg(0.0, 0.2, 0.0, 1.0), 1.0)
             + segment_contribution_interior(LEFT, _seg(0.2, 0.5, 0.2, 1.0), 1.0))
    assert parts == pytest.approx(whole, rel=1e-12)


def test_interior_rejects_touching_segment():
    with pytest.raises(ValueError):
        segment_contribution_interior(LEFT, _seg(0.0, 1.0, 0.0, 1.0), 1.0)


@pytest.mark.parametrize("c0,c1,val", [(0.0, 1.0, 2 / math.sqrt(math.pi)),
                                       (1.0, 0.0, 1 / math.sqrt(math.pi)),
                                       (0.0, 0.0, 0.0)])
def test_terminal_examples(c0, c1, val):
    got = segment_contribution_terminal(LEFT, _seg(0.0, 1.0, c0, c1), 1.0)
    assert got == pytest.approx(val, rel=1e-12, abs=1e-300)


def test_terminal_power_rule_cross_check():
    got = segment_contribution_terminal(LEFT, _seg(0.0, 1.0, 0.0, 1.0), 1.0)
    assert got == pytest.approx(1.0 / math.gamma(1.5), rel=1e-12)


def test_terminal_rejects_gap():
    with pytest.raises(ValueError):
        segment_contribution_terminal(LEFT, _seg(0.0, 0.9, 0.0, 1.0), 1.0)


def test_terminal_matches_primitive_difference():
    g, u, s, c0, c1 = 0.3, 0.2, 0.9, 0.4, -0.5
    val = segment_contribution_terminal(FractionalOrder(g), _seg(u, s, c0, c1), s)
    assert val == pytest.approx(kernel_terminal_quadrature(g, u, s, c0, c1), rel=1e-9)


def test_classical_order_has_no_segment_form():
    with pytest.raises(ValueError):
        segment_contribution_terminal(FractionalOrder(1.0), _seg(0.0, 1.0, 0.0, 1.0), 1.0)


def _scale(g, u, v, s, c0, c1):
    # size of the integrand data, guards the relative test near cancellation
    return (abs(c0) + abs(c1) * (v - u)) * (s - v) ** (-g) / math.gamma(1 - g)


@settings(max_examples=150, deadline=None)
@given(g=st.floats(0.02, 0.98), u=st.floats(-2, 2), w=st.floats(1e-3, 2),
       gap=st.floats(1e-3, 2), c0=st.floats(-2, 2), c1=st.floats(-3, 3),
       side=st.sampled_from(["left", "right"]))
def test_interior_oracle_equivalence(g, u, w, gap, c0, c1, side):
    v = u + w
    order = FractionalOrder(g, side, 0)
    seg = _seg(u, v, c0, c1)
    if side == "left":
        s = v + gap
        ref = kernel_quadrature(g, u, v, s, c0, c1, "left")
        scale = _scale(g, u, v, s, c0, c1)
    else:
        s = u - gap
        ref = kernel_quadrature(g, u, v, s, c0, c1, "right")
        scale = (abs(c0) + abs(c1) * w) * gap ** (-g) / math.gamma(1 - g)
    val = segment_contribution_interior(order, seg, s)
    assert abs(val - ref) <= 1e-8 * max(abs(ref), scale)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.02, 0.98), u=st.floats(-2, 2), w=st.floats(1e-2, 2),
       c0=st.floats(-2, 2), c1=st.floats(-3, 3))
def test_terminal_oracle_equivalence(g, u, w, c0, c1):
    s = u + w
    val = segment_contribution_terminal(FractionalOrder(g), _seg(u, s, c0, c1), s)
    ref = kernel_terminal_quadrature(g, u, s, c0, c1)
    scale = (abs(c0) + abs(c1) * w) * w ** (-g) / math.gamma(1 - g)
    assert abs(val - ref) <= 1e-8 * max(abs(ref), scale)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.02, 0.98), u=st.floats(-2, 2), w=st.floats(1e-3, 2),
       gap=st.floats(1e-3, 2), c0=st.floats(-2, 2), c1=st.floats(-3, 3))
def test_mirror_symmetry(g, u, w, gap, c0, c1):
    v, s = u + w, u + w + gap
    seg = _seg(u, v, c0, c1)
    mirrored = SegmentBasisTrace(-v, -u, seg.psi_v, seg.psi_u)
    left = segment_contribution_interior(FractionalOrder(g, "left"), seg, s)
    right = segment_contribution_interior(FractionalOrder(g, "right"), mirrored, -s)
    assert right == pytest.approx(left, rel=1e-13, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.02, 0.98), u=st.floats(-1, 1), w=st.floats(1e-2, 1),
       t=st.floats(0.05, 0.95), gap=st.floats(1e-3, 1))
def test_additivity_property(g, u, w, t, gap):
    v, s = u + w, u + w + gap
    m = u + t * w
    o = FractionalOrder(g)
    whole = segment_contribution_interior(o, _seg(u, v, 0.3, 0.7), s)
    parts = (segment_contribution_interior(o, _seg(u, m, 0.3, 0.7), s)
             + segment_contribution_interior(o, _seg(m, v, 0.3 + 0.7 * (m - u), 0.7), s))
    assert parts == pytest.approx(whole, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("backend", _kernels.available_backends())
def test_weights_backends(backend):
    k = _kernels.get_backend(backend)
    for dn, df in [(0.0, 0.3), (0.1, 0.11), (0.1, 0.9), (1e-4, 2.0)]:
        wn, wf = k.segment_weights(0.4, 1 / math.gamma(0.6), dn, df)
        ref = segment_weights(0.4, dn, df)
        assert (wn, wf) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("side", ["left", "right"])
def test_power_rule_on_cube(side, rng):
    mesh = generate_cube_mesh(4, 3)
    g = 0.35
    for _ in range(10):
        e, x = random_interior_point(mesh, rng)
        axis = int(rng.integers(3))
        order = FractionalOrder(g, side, axis)
        path = trace_path(mesh, x, axis, side, e)
        val = eval_field(order, path, mesh, mesh.vertices[:, axis])
        xi = x[axis]
        if side == "left":
            ref = xi ** (1 - g) / math.gamma(2 - g)
        else:
            ref = _rl_one_sided(lambda t: t, lambda t: 1.0, xi, 0.0, 1.0, g, "right")
        assert val == pytest.approx(ref, rel=1e-10)


def test_partition_of_unity_image(ball6, rng):
    for _ in range(20):
        e, x = random_interior_point(ball6, rng)
        axis = int(rng.integers(3))
        side = ("left", "right")[int(rng.integers(2))]
        order = FractionalOrder(0.6, side, axis)
        path = trace_path(ball6, x, axis, side, e)
        total = sum(eval_global_basis(order, path, ball6).values())
        ref = path.length ** -0.6 / math.gamma(0.4)
        assert total == pytest.approx(ref, rel=1e-9)


def test_continuity_towards_classical(rng):
    mesh = generate_cube_mesh(4, 3)
    for _ in range(5):
        e, x = random_interior_point(mesh, rng)
        order = FractionalOrder(1 - 1e-6, "left", 1)
        path = trace_path(mesh, x, 1, "left", e)
        assert eval_field(order, path, mesh, mesh.vertices[:, 1]) == pytest.approx(1.0, abs=1e-3)


def test_basis_off_path_is_zero():
    mesh = generate_cube_mesh(2, 2)
    path = trace_path(mesh, [0.3, 0.2], 0, "left")
    far = int(np.flatnonzero(np.all(mesh.vertices == 1.0, axis=1))[0])
    e = int(mesh.vertex_to_simplices(far)[0])
    j = int(np.flatnonzero(mesh.simplices[e] == far)[0])
    assert eval_fractional_derivative(FractionalOrder(0.5), path, mesh, e, j) == 0.0


def test_local_and_global_evaluation_agree(cube3, rng):
    e, x = random_interior_point(cube3, rng)
    path = trace_path(cube3, x, 2, "right", e)
    order = FractionalOrder(0.7, "right", 2)
    glob = eval_global_basis(order, path, cube3)
    local = eval_all_local_basis(order, path, cube3)
    assert {k[0] for k in local} == {s.simplex_id for s in path.segments}
    e0 = path.segments[-1].simplex_id
    for j in range(4):
        v = int(cube3.simplices[e0, j])
        assert eval_fractional_derivative(order, path, cube3, e0, j) == glob[v]


def test_side_mismatch(cube3):
    path = trace_path(cube3, [0.3, 0.4, 0.55], 0, "left")
    with pytest.raises(ValueError, match="does not match"):
        eval_all_local_basis(FractionalOrder(0.5, "right", 0), path, cube3)
    with pytest.raises(ValueError, match="does not match"):
        eval_all_local_basis(FractionalOrder(0.5, "left", 1), path, cube3)


REF_TET = SimplicialMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def test_classical_reference_tet():
    assert derivative_classical(REF_TET, 0, 1, 0) == 1.0
    assert derivative_classical(REF_TET, 0, 0, 0) == -1.0


def test_classical_partition_of_unity(cube3):
    for e in range(0, cube3.num_simplices, 37):
        for axis in range(3):
            assert abs(sum(derivative_classical(cube3, e, j, axis) for j in range(4))) < 1e-12


def test_classical_finite_difference(rng):
    pts = rng.normal(size=(4, 3))
    mesh = SimplicialMesh(pts, [[0, 1, 2, 3]])
    c = mesh.vertices.mean(axis=0)
    h = 1e-5
    for j in range(4):
        for axis in range(3):
            dx = np.zeros(3)
            dx[axis] = h
            fd = (barycentric(mesh, 0, c + dx)[j] - barycentric(mesh, 0, c - dx)[j]) / (2 * h)
            ref = derivative_classical(mesh, 0, j, axis)
            assert fd == pytest.approx(ref, rel=1e-8, abs=1e-8)
