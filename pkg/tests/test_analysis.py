import math

import numpy as np
import pytest

from composite_dg.analysis import (MMS_CASES, ConvergenceRow, compute_error,
                                   convergence_study, mms_problem, observed_order,
                                   pn_analog, qw_analog, solve_reference_1d,
                                   transverse_variation)
from composite_dg.exceptions import NotLayered, UnknownCase, ZeroReferenceNorm
from composite_dg.forms import CSIPG, CWOPSIP, MethodSpec
from composite_dg.geometry import Dirichlet
from composite_dg.problem import Layer, LayeredLayout, ProblemSpec
from composite_dg.quadrature import segment_rule, triangle_rule
from composite_dg.solver import SolveSettings
from composite_dg.space import ScalarField, interpolate, jump_average, trace_pair

LAYOUT = LayeredLayout(0.0, 1.0, (Layer(0.0, 0.6, 3), Layer(0.6, 1.0, 2)))
AFFINE = ScalarField(lambda x, y: 2 * x + 3 * y + 1, lambda x, y: (2 + 0 * x, 3 + 0 * y))


def test_reference_zero_problem():
    ref = solve_reference_1d(ProblemSpec(), LAYOUT)
    assert np.all(ref.values == 0) and ref.M == 1024


def test_reference_constant_equilibrium():
    prob = ProblemSpec(v_offset=0.4, w_offset=1.6, boundary=1.0)
    ref = solve_reference_1d(prob, LAYOUT)
    assert np.max(np.abs(ref.values - 1)) < 1e-12
    assert ref.residual <= 1e-12


def test_reference_pn_residual_and_layers():
    prob, lay = pn_analog()
    ref = solve_reference_1d(prob, lay)
    assert ref.residual <= 1e-12
    assert np.any(np.isclose(ref.nodes, 0.6, atol=1e-15))
    assert ref.values[0] == pytest.approx(np.arcsinh(0.5))
    assert ref.values[-1] == pytest.approx(-np.arcsinh(0.5))


def test_reference_self_convergence():
    prob, lay = pn_analog()
    refs = [solve_reference_1d(prob, lay, M) for M in (1024, 2048, 4096)]
    y = np.linspace(0, 1, 20001)

    def diff(a, b):
        return np.sqrt(np.trapezoid((a.profile(y) - b.profile(y)) ** 2, y))

    ratio = diff(refs[0], refs[1]) / diff(refs[1], refs[2])
    assert ratio == pytest.approx(4.0, abs=0.5)


def test_reference_interpolation_modes():
    prob, lay = pn_analog()
    lin = solve_reference_1d(prob, lay)
    spl = solve_reference_1d(prob, lay, interpolation="spline")
    y = lin.nodes
    assert np.allclose(lin.profile(y), lin.values, atol=1e-14)
    assert np.allclose(spl.profile(y), spl.values, atol=1e-12)
    gx, gy = lin.gradient(0, np.array([0.3]), np.array([0.3]))
    assert gx[0] == 0 and np.isfinite(gy[0])


def test_reference_not_layered():
    lateral = LayeredLayout(0.0, 1.0, LAYOUT.layers,
                            {"bottom": Dirichlet("b"), "top": Dirichlet("t"),
                             "left": Dirichlet("b")})
    with pytest.raises(NotLayered):
        solve_reference_1d(ProblemSpec(), lateral)
    with pytest.raises(NotLayered):
        solve_reference_1d(ProblemSpec(k1=lambda x, y: x), LAYOUT)


def test_error_of_affine_interpolant_is_zero():
    s = LAYOUT.space(2)
    u = interpolate(s, AFFINE)
    l2, h1, br = compute_error(s, u, AFFINE, MethodSpec(CSIPG))
    assert l2 < 1e-13 and h1 < 1e-13 and br < 1e-12


def test_error_constant_shift_on_one_subdomain():
    s = LAYOUT.space(2)
    u = interpolate(s, AFFINE)
    u[s.dof_slice(0)] += 0.1
    l2, _, _ = compute_error(s, u, AFFINE)
    rule = triangle_rule(6)
    ref_sq = 0.0
    for i in range(2):
        x, y = s.quad_points(i, rule)
        ref_sq += np.sum(s.mesh_data(i).area[:, None] * rule.weights * AFFINE.value(i, x, y) ** 2)
    assert l2**2 == pytest.approx(0.01 * 0.6 / ref_sq, rel=1e-12)


def test_zero_reference_norm():
    s = LAYOUT.space(2)
    with pytest.raises(ZeroReferenceNorm):
        compute_error(s, np.zeros(s.total_dofs), 0.0)


def test_mms_unknown_case():
    with pytest.raises(UnknownCase):
        mms_problem("nope")


def test_mms_const_eps_source_at_center():
    prob, u, _ = mms_problem("const_eps")
    assert prob.k1.value(0, np.array(0.5), np.array(0.5)) == pytest.approx(0.0, abs=1e-14)


def test_mms_piecewise_flux_continuity():
    prob, u, lay = mms_problem("piecewise_eps")
    x = np.linspace(0, 1, 11)
    y = np.full_like(x, 0.5)
    _, g0 = u.gradient(0, x, y)
    _, g1 = u.gradient(1, x, y)
    e0 = prob.eps.value(0, x, y)
    e1 = prob.eps.value(1, x, y)
    assert np.allclose(e0 * g0, e1 * g1, atol=1e-13)


class _Rule:
    def __init__(self, points, weights):
        self.points, self.weights = points, weights


def _refined_rule(rule, levels):
    """Composite rule: split the reference triangle into 4**levels pieces."""
    corners = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for c in corners:
            m01, m12, m02 = (c[0] + c[1]) / 2, (c[1] + c[2]) / 2, (c[0] + c[2]) / 2
            nxt += [np.array([c[0], m01, m02]), np.array([m01, c[1], m12]),
                    np.array([m02, m12, c[2]]), np.array([m12, m02, m01])]
        corners = nxt
    pts = np.concatenate([rule.points @ c for c in corners])
    w = np.concatenate([rule.weights / len(corners)] * len(corners))
    return _Rule(pts, w)


def _consistency_residual(case, K, phi):
    """Weak residual of the exact manufactured solution against ``phi``."""
    prob, u, lay = mms_problem(case)
    s = lay.space(K)
    rule = _refined_rule(triangle_rule(6), levels=2)
    total = 0.0
    for i in range(s.n_subdomains):
        md = s.mesh_data(i)
        x, y = s.quad_points(i, rule)
        w = md.area[:, None] * rule.weights
        ux, uy = u.gradient(i, x, y)
        gp = np.einsum("tkd,tk->td", md.grads, phi[md.dofs])
        ph = phi[md.dofs] @ rule.points.T
        uv = u.value(i, x, y)
        eps = prob.eps.value(i, x, y)
        src = prob.k1.value(i, x, y)
        b = 0.0 if prob.linear else np.exp(uv) - np.exp(-uv)
        total += np.sum(w * (eps * (ux * gp[:, :1] + uy * gp[:, 1:]) + (b - src) * ph))
    seg_rule = segment_rule(5)
    for k, segs in s.segments.items():
        e = s.grid.edges[k]
        n = np.array(e.normal)
        for seg in segs:
            # composite rule: 8 pieces per segment
            cuts = np.linspace(seg.t0, seg.t1, 9)
            t = (cuts[:-1, None] + np.diff(cuts)[:, None] * seg_rule.points).ravel()
            w = (np.diff(cuts)[:, None] * seg_rule.weights).ravel() * e.length
            x, y = e.point(t)
            fluxes = []
            for sub in e.owners:
                gx, gy = u.gradient(sub, x, y)
                fluxes.append(prob.eps.value(sub, x, y) * (gx * n[0] + gy * n[1]))
            jump, _ = jump_average(trace_pair(s, phi, seg, t))
            total -= np.sum(w * np.mean(fluxes, axis=0) * jump)
    return total, s


@pytest.mark.parametrize("case", ["const_eps", "piecewise_eps", "nested"])
def test_mms_consistency(case):
    rng = np.random.default_rng(7)
    prob, u, lay = mms_problem(case)
    n = lay.space(8).total_dofs
    worst = 0.0
    for _ in range(50):
        phi = rng.standard_normal(n)
        r, _ = _consistency_residual(case, 8, phi)
        worst = max(worst, abs(r))
    assert worst <= 1e-8


def test_transverse_variation():
    s = LAYOUT.space(4)
    u = interpolate(s, lambda x, y: np.sin(y))
    assert transverse_variation(s, u) < 1e-15
    u2 = interpolate(s, lambda x, y: x)
    assert transverse_variation(s, u2) == pytest.approx(1.0)


def test_convergence_study_rows():
    prob, u, lay = mms_problem("const_eps")
    rows = convergence_study(prob, lay, MethodSpec(CSIPG), [4, 8, 16], u)
    assert [r.K for r in rows] == [4, 8, 16]
    assert rows[0].ratio_L2 is None
    assert rows[1].ratio_H1 == pytest.approx(rows[0].err_H1 / rows[1].err_H1)
    assert observed_order(rows, "H1") == pytest.approx(math.log2(rows[2].ratio_H1))
    assert observed_order(rows, "broken") > 0.8
    assert len(rows[0].csv_values()) == len(ConvergenceRow.CSV_COLUMNS) == 9
    assert ConvergenceRow.CSV_COLUMNS == ("K", "dofs", "err_L2", "ratio_L2", "err_H1",
                                          "ratio_H1", "err_broken", "newton_iters", "seconds")


def test_convergence_study_requires_doubling():
    prob, u, lay = mms_problem("const_eps")
    with pytest.raises(ValueError):
        convergence_study(prob, lay, MethodSpec(CSIPG), [4, 6], u)


def test_convergence_study_failed_row_does_not_abort():
    prob, lay = pn_analog(doping=50.0)
    ref = solve_reference_1d(prob, lay)
    rows = convergence_study(prob, lay, MethodSpec(CSIPG), [2, 4], ref,
                             settings=SolveSettings(max_newton=1))
    assert len(rows) == 2
    assert all(math.isnan(r.err_L2) and r.error for r in rows)


def test_convergence_study_without_reference():
    prob, lay = pn_analog()
    rows, sols = convergence_study(prob, lay, MethodSpec(CWOPSIP), [2, 4], None,
                                   keep_solutions=True)
    assert all(math.isnan(r.err_H1) and r.newton_iters >= 1 for r in rows)
    assert sols[1][1].shape == (sols[1][0].total_dofs,)


def test_analog_layouts():
    _, lay = pn_analog()
    assert lay.divisions(2) == [(6, 2), (4, 2)]
    prob, lay = qw_analog()
    assert len(lay.layers) == 5
    thick = [l.y1 - l.y0 for l in lay.layers]
    assert thick[2] == min(thick)
    assert prob.eps.value(2, np.array(0.5), np.array(0.5)) == pytest.approx(1.2)


def test_all_mms_cases_build():
    for case in MMS_CASES:
        prob, u, lay = mms_problem(case)
        assert lay.space(2).total_dofs > 0
