import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from composite_dg.exceptions import EvaluationError, OutOfSubdomainError
from composite_dg.geometry import Dirichlet, build_coarse_grid, classify_edges
from composite_dg.quadrature import triangle_rule
from composite_dg.space import (CompositeSpace, PiecewiseField, ScalarField, evaluate,
                                evaluate_gradient, interpolate, jump_average, trace_pair)

from conftest import UNIT, two_layer_space

AFFINE = ScalarField(lambda x, y: 2 * x + 3 * y - 1, lambda x, y: (2 + 0 * x, 3 + 0 * y))


def test_dof_bookkeeping():
    s = two_layer_space(3, 2, 4)
    assert s.total_dofs == 4 * 5 + 3 * 5
    assert s.offsets == (0, 20)
    assert s.dof_slice(1) == slice(20, 35)
    # interface vertices carry one DOF per side
    top0 = s.meshes[0].vertices[s.meshes[0].traces["top"]]
    bot1 = s.meshes[1].vertices[s.meshes[1].traces["bottom"]]
    assert np.allclose(top0[[0, -1]], bot1[[0, -1]])


def test_interpolate_constant():
    s = two_layer_space()
    c = interpolate(s, 2.5)
    assert np.all(c == 2.5)
    for segs in s.segments.values():
        for seg in segs:
            if seg.elem_b is not None:
                j, _ = jump_average(trace_pair(s, c, seg, 0.5 * (seg.t0 + seg.t1)))
                assert abs(j) < 1e-14


def test_interpolate_affine_exact():
    s = two_layer_space(3, 2, 3)
    c = interpolate(s, AFFINE)
    rng = np.random.default_rng(0)
    for i, r in enumerate(s.grid.subdomains):
        x = rng.uniform(r.x0, r.x1, 50)
        y = rng.uniform(r.y0, r.y1, 50)
        assert np.allclose(evaluate(s, c, i, x, y), AFFINE.value(i, x, y), atol=1e-14)
        gx, gy = evaluate_gradient(s, c, i, x, y)
        assert np.allclose(gx, 2) and np.allclose(gy, 3)


def test_interpolate_error_propagates():
    s = two_layer_space()
    with pytest.raises(EvaluationError):
        interpolate(s, ScalarField(lambda x, y: 1 / 0))
    with pytest.raises(EvaluationError):
        interpolate(s, lambda x, y: np.full_like(x, np.nan))


def _h1_interp_error(K):
    f = ScalarField(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
                    lambda x, y: (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                                  np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)))
    s = two_layer_space(3 * K, 2 * K, K)
    c = interpolate(s, f)
    rule = triangle_rule(6)
    err = 0.0
    for i in range(s.n_subdomains):
        md = s.mesh_data(i)
        x, y = s.quad_points(i, rule)
        gh = np.einsum("tkd,tk->td", md.grads, c[md.dofs])
        fx, fy = f.gradient(i, x, y)
        w = md.area[:, None] * rule.weights
        err += np.sum(w * ((gh[:, :1] - fx) ** 2 + (gh[:, 1:] - fy) ** 2))
    return np.sqrt(err)


def test_h1_interpolation_order():
    e = [_h1_interp_error(K) for K in (4, 8, 16)]
    assert e[1] / e[2] == pytest.approx(2.0, abs=0.1)


def test_evaluate_out_of_subdomain():
    s = two_layer_space()
    with pytest.raises(OutOfSubdomainError):
        evaluate(s, np.zeros(s.total_dofs), 0, 0.5, 0.9)
    with pytest.raises(OutOfSubdomainError):
        evaluate_gradient(s, np.zeros(s.total_dofs), 1, 0.5, 0.1)


def test_vertex_value_independent_of_triangle():
    s = two_layer_space(4, 4, 4)
    c = np.random.default_rng(3).standard_normal(s.total_dofs)
    m = s.meshes[0]
    for v in (6, 7, 12):
        x, y = m.vertices[v]
        tris = np.nonzero(np.any(m.triangles == v, axis=1))[0]
        vals = [np.sum(m.barycentric(t, x, y) * c[m.triangles[t]]) for t in tris]
        assert np.allclose(vals, c[v], atol=1e-14)
        assert evaluate(s, c, 0, x, y) == pytest.approx(c[v], abs=1e-14)


def test_interface_evaluation_gives_jump():
    s = two_layer_space(3, 2, 2)
    lower = ScalarField(lambda x, y: x + 1)
    upper = ScalarField(lambda x, y: 3 * x)
    c = interpolate(s, PiecewiseField([lower, upper]))
    (k,) = s.grid.interface_edges
    for seg in s.segments[k]:
        t = 0.5 * (seg.t0 + seg.t1)
        x, y = s.grid.edges[k].point(t)
        va = evaluate(s, c, 0, x, y)
        vb = evaluate(s, c, 1, x, y)
        jump, avg = jump_average(trace_pair(s, c, seg, t))
        assert jump == pytest.approx(va - vb, abs=1e-14)
        assert jump == pytest.approx((x + 1) - 3 * x, abs=1e-14)
        assert avg == pytest.approx(0.5 * (va + vb), abs=1e-14)


def test_trace_continuous_field():
    s = two_layer_space(4, 4, 3)
    c = interpolate(s, lambda x, y: np.exp(x) * np.cos(y))
    (k,) = s.grid.interface_edges
    for seg in s.segments[k]:
        j, _ = jump_average(trace_pair(s, c, seg, np.linspace(seg.t0, seg.t1, 5)))
        assert np.max(np.abs(j)) < 1e-14


def test_trace_indicator_jump():
    s = two_layer_space(3, 2, 2)
    c = np.zeros(s.total_dofs)
    c[s.dof_slice(0)] = 1.0
    (k,) = s.grid.interface_edges
    for seg in s.segments[k]:
        j, avg = jump_average(trace_pair(s, c, seg, seg.t0))
        assert j == pytest.approx(1.0) and avg == pytest.approx(0.5)


def test_trace_dirichlet_one_sided():
    s = two_layer_space(3, 2, 2)
    c = interpolate(s, AFFINE)
    k = s.grid.dirichlet_edges[0]
    seg = s.segments[k][0]
    va, vb = trace_pair(s, c, seg, seg.t1)
    assert vb is None
    j, avg = jump_average((va, vb))
    assert j == avg == va
    with pytest.raises(ValueError):
        trace_pair(s, c, seg, seg.t1 + 0.1)


@pytest.mark.parametrize("na,nb,expected", [(4, 4, True), (3, 2, False), (2, 4, True),
                                            (6, 4, False)])
def test_nested_check(na, nb, expected):
    assert two_layer_space(na, nb, 2).nested_mode is expected


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
def test_interpolation_is_projection(na, nb, ny):
    s = two_layer_space(na, nb, ny)
    f = PiecewiseField([ScalarField(lambda x, y: np.sin(3 * x) + y ** 2),
                        ScalarField(lambda x, y: np.cos(2 * y) - x)])
    c = interpolate(s, f)
    again = interpolate(s, PiecewiseField([
        ScalarField(lambda x, y, i=i: evaluate(s, c, i, x, y)) for i in range(2)]))
    assert np.allclose(again, c, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8))
def test_dirichlet_endpoint_exactness(na, nb):
    s = two_layer_space(na, nb, 2)
    f = lambda x, y: np.exp(x - y) + x * y
    c = interpolate(s, f)
    for k in s.grid.dirichlet_edges:
        for seg in s.segments[k]:
            for t in (seg.t0, seg.t1):
                e = s.grid.edges[k]
                x, y = e.point(t)
                va, _ = trace_pair(s, c, seg, t)
                # nodes of the owning mesh reproduce f exactly
                m = s.meshes[e.owners[0]]
                if np.min(np.abs(m.vertices[m.traces[e.sides[0]], 0] - x)) < 1e-14:
                    assert va == pytest.approx(f(x, y), abs=1e-14)


def test_space_rejects_misordered_meshes():
    from composite_dg.geometry import build_subdomain_mesh
    g = build_coarse_grid(UNIT, [], [0.5])
    m0 = build_subdomain_mesh(g.subdomains[0], 2, 2, owner=1)
    m1 = build_subdomain_mesh(g.subdomains[1], 2, 2, owner=0)
    with pytest.raises(ValueError):
        CompositeSpace(g, (m0, m1))
