"""Error measurement, manufactured solutions, the 1D layered oracle and
convergence studies."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .exceptions import (CompositeDGError, NoConvergence, NotLayered,
                         UnknownCase, ZeroReferenceNorm)
from .forms import MethodSpec, broken_norm
from .geometry import DIRICHLET, Dirichlet
from .problem import Layer, LayeredLayout, ProblemSpec
from .quadrature import segment_rule, triangle_rule
from .solver import SolveSettings, newton_solve
from .space import CompositeSpace, PiecewiseField, ScalarField, as_field

__all__ = [
    "ReferenceProfile1D", "ConvergenceRow", "solve_reference_1d", "compute_error",
    "mms_problem", "MMS_CASES", "convergence_study", "observed_order",
    "pn_analog", "qw_analog", "transverse_variation",
]

log = logging.getLogger(__name__)

ERROR_DEGREE = 4


@dataclass
class ReferenceProfile1D:
    """Nodal 1D solution along ``y``, used as a transversally constant field.

    Between nodes the profile is evaluated piecewise linearly, or with a
    cubic spline per layer when ``interpolation="spline"``.
    """

    nodes: np.ndarray
    values: np.ndarray
    breaks: np.ndarray          # layer interfaces including both ends
    residual: float
    axis: str = "y"
    interpolation: str = "linear"
    _splines: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._splines = []
        for a, b in zip(self.breaks[:-1], self.breaks[1:]):
            m = (self.nodes >= a - 1e-14) & (self.nodes <= b + 1e-14)
            self._splines.append(CubicSpline(self.nodes[m], self.values[m], bc_type="not-a-knot"))

    @property
    def M(self) -> int:
        return len(self.nodes) - 1

    def _layer(self, y):
        return np.clip(np.searchsorted(self.breaks, y, side="right") - 1, 0, len(self._splines) - 1)

    def profile(self, y, derivative: int = 0):
        y = np.asarray(y, dtype=float)
        if self.interpolation == "linear":
            if derivative == 0:
                return np.interp(y, self.nodes, self.values)
            k = np.clip(np.searchsorted(self.nodes, y, side="right") - 1, 0, self.M - 1)
            return (self.values[k + 1] - self.values[k]) / (self.nodes[k + 1] - self.nodes[k])
        out = np.empty(y.shape)
        lay = self._layer(y)
        for L, s in enumerate(self._splines):
            m = lay == L
            if np.any(m):
                out[m] = s(y[m], derivative)
        return out

    def value(self, i, x, y):
        return np.broadcast_to(self.profile(y), np.broadcast(x, y).shape)

    def gradient(self, i, x, y):
        gy = np.broadcast_to(self.profile(y, 1), np.broadcast(x, y).shape)
        return np.zeros_like(gy), gy

    def bounds(self, i=None):
        return None


def _layer_values(f, layout: LayeredLayout, name: str, probe: int = 5):
    """Sample ``f`` on a transverse probe of each layer; reject x-dependence."""
    xs = np.linspace(layout.x0, layout.x1, probe)
    out = []
    for i, l in enumerate(layout.layers):
        ys = np.linspace(l.y0, l.y1, probe)
        X, Y = np.meshgrid(xs, ys)
        v = np.asarray(f.value(i, X, Y), dtype=float)
        if np.max(np.abs(v - v[:, :1])) > 1e-12 * max(1.0, np.max(np.abs(v))):
            raise NotLayered(f"{name} varies transversally in layer {i}")
        out.append(v)
    return out


def _allocate(M: int, layout: LayeredLayout) -> list[int]:
    th = np.array([l.y1 - l.y0 for l in layout.layers])
    n = np.maximum(1, np.floor(M * th / th.sum()).astype(int))
    while n.sum() < M:
        n[np.argmax(M * th / th.sum() - n)] += 1
    while n.sum() > M:
        n[np.argmax(n)] -= 1
    return n.tolist()


def solve_reference_1d(problem: ProblemSpec, layout: LayeredLayout, M: int = 1024,
                       tol: float = 1e-12, max_iter: int = 100,
                       interpolation: str = "linear") -> ReferenceProfile1D:
    """P1 finite element solution of the longitudinal reduction
    ``-(eps u')' + exp(u - v) - exp(w - u) = k1`` with Dirichlet ends.

    Newton stops once the residual, relative to the size of the stiffness
    term ``max(1, ||K| |u||)``, is below ``tol``.

    ``M`` elements are shared among the layers in proportion to their
    thickness so that layer interfaces are grid nodes.
    """
    conds = {s: layout.boundary.get(s, "neumann") for s in ("bottom", "top", "left", "right")}
    if not (isinstance(conds["bottom"], Dirichlet) and isinstance(conds["top"], Dirichlet)
            and conds["left"] == "neumann" and conds["right"] == "neumann"):
        raise NotLayered("1D reduction needs Dirichlet ends and Neumann lateral sides")
    for name in ("eps", "k1", "v_offset", "w_offset"):
        _layer_values(getattr(problem, name), layout, name)

    grid = layout.grid()
    xm = 0.5 * (layout.x0 + layout.x1)
    end_vals = {}
    for k in grid.dirichlet_edges:
        e = grid.edges[k]
        f = problem.boundary_field(e)
        xs = np.linspace(e.start[0], e.end[0], 5)
        v = f.value(e.owners[0], xs, np.full(5, e.start[1]))
        if np.ptp(v) > 1e-12 * max(1.0, np.max(np.abs(v))):
            raise NotLayered("Dirichlet data varies along a contact")
        end_vals[e.sides[0]] = float(v[0])

    counts = _allocate(M, layout)
    pieces = [np.linspace(l.y0, l.y1, n + 1) for l, n in zip(layout.layers, counts)]
    nodes = np.concatenate([pieces[0]] + [p[1:] for p in pieces[1:]])
    elem_layer = np.repeat(np.arange(len(counts)), counts)
    h = np.diff(nodes)
    rule = segment_rule(5)
    yq = nodes[:-1, None] + h[:, None] * rule.points[None, :]
    xq = np.full_like(yq, xm)
    wq = h[:, None] * rule.weights[None, :]
    phi = np.stack([1.0 - rule.points, rule.points], axis=1)  # (nq, 2)

    def per_layer(f):
        out = np.empty_like(yq)
        for L in range(len(counts)):
            m = elem_layer == L
            out[m] = f.value(L, xq[m], yq[m])
        return out

    eps_q, k_q = per_layer(problem.eps), per_layer(problem.k1)
    v_q, w_q = per_layer(problem.v_offset), per_layer(problem.w_offset)
    n = len(nodes)
    kdiag = np.sum(eps_q * wq, axis=1) / h**2
    Kmat = sp.diags([np.concatenate([kdiag, [0]]) + np.concatenate([[0], kdiag]),
                     -kdiag, -kdiag], [0, 1, -1], format="csr")
    Kabs = abs(Kmat)
    load = np.zeros(n)
    lw = (wq * k_q) @ phi
    load[:-1] += lw[:, 0]
    load[1:] += lw[:, 1]

    u = np.interp(nodes, [nodes[0], nodes[-1]], [end_vals["bottom"], end_vals["top"]])
    free = np.arange(1, n - 1)
    res = np.inf
    for _ in range(max_iter):
        uq = u[:-1, None] * phi[None, :, 0] + u[1:, None] * phi[None, :, 1]
        ea, eb = np.exp(uq - v_q), np.exp(w_q - uq)
        g = (wq * (ea - eb)) @ phi
        bvec = np.zeros(n)
        bvec[:-1] += g[:, 0]
        bvec[1:] += g[:, 1]
        dq = wq * (ea + eb)
        m00 = dq @ (phi[:, 0] ** 2)
        m01 = dq @ (phi[:, 0] * phi[:, 1])
        m11 = dq @ (phi[:, 1] ** 2)
        dB = sp.diags([np.concatenate([m00, [0]]) + np.concatenate([[0], m11]), m01, m01],
                      [0, 1, -1], format="csr")
        r = (Kmat @ u + bvec - load)[free]
        scale = max(1.0, float(np.linalg.norm((Kabs @ np.abs(u))[free])))
        res = float(np.linalg.norm(r)) / scale
        if problem.linear:
            r = (Kmat @ u - load)[free]
            Jm = Kmat[free][:, free]
        else:
            Jm = (Kmat + dB)[free][:, free]
        if res <= tol and not problem.linear:
            break
        du = spla.spsolve(Jm.tocsc(), -r)
        lam = 1.0
        while lam > 2.0**-30:
            trial = u.copy()
            trial[free] += lam * du
            if problem.linear:
                break
            tq = trial[:-1, None] * phi[None, :, 0] + trial[1:, None] * phi[None, :, 1]
            gt = (wq * (np.exp(tq - v_q) - np.exp(w_q - tq))) @ phi
            bt = np.zeros(n)
            bt[:-1] += gt[:, 0]
            bt[1:] += gt[:, 1]
            if np.linalg.norm((Kmat @ trial + bt - load)[free]) <= res * scale:
                break
            lam *= 0.5
        u = trial
        if problem.linear:
            res = float(np.linalg.norm((Kmat @ u - load)[free])) / max(
                1.0, float(np.linalg.norm((Kabs @ np.abs(u))[free])))
            break
    else:
        raise NoConvergence(f"1D reference did not converge (residual {res:.3e})")
    breaks = np.array([layout.layers[0].y0] + [l.y1 for l in layout.layers])
    return ReferenceProfile1D(nodes, u, breaks, res, interpolation=interpolation)


def compute_error(space: CompositeSpace, coeffs: np.ndarray, reference,
                  method: MethodSpec | None = None, eps=1.0):
    """Relative L2 and H1 errors (broken H1 over subdomains), plus the
    absolute broken-norm error when ``method`` is given.

    ``reference`` is any field with per-subdomain ``value``/``gradient``,
    e.g. an exact solution or a :class:`ReferenceProfile1D`.
    """
    ref = as_field(reference)
    rule = triangle_rule(ERROR_DEGREE)
    e_l2 = r_l2 = e_h1 = r_h1 = 0.0
    for i in range(space.n_subdomains):
        md = space.mesh_data(i)
        x, y = space.quad_points(i, rule)
        w = md.area[:, None] * rule.weights[None, :]
        uh = coeffs[md.dofs] @ rule.points.T
        gh = np.einsum("tkd,tk->td", md.grads, coeffs[md.dofs])
        rv = ref.value(i, x, y)
        rx, ry = ref.gradient(i, x, y)
        e_l2 += float(np.sum(w * (uh - rv) ** 2))
        r_l2 += float(np.sum(w * rv**2))
        e_h1 += float(np.sum(w * ((gh[:, 0:1] - rx) ** 2 + (gh[:, 1:2] - ry) ** 2)))
        r_h1 += float(np.sum(w * (rx**2 + ry**2)))
    if r_l2 == 0.0:
        raise ZeroReferenceNorm("reference has zero L2 norm")
    rel_l2 = math.sqrt(e_l2 / r_l2)
    rel_h1 = math.sqrt((e_l2 + e_h1) / (r_l2 + r_h1))
    broken = None
    if method is not None:
        broken = broken_norm(space, method, coeffs, eps, against=ref)
    return rel_l2, rel_h1, broken


# manufactured solutions -------------------------------------------------

def _cos_cos(scale=1.0):
    pi = np.pi
    return ScalarField(lambda x, y: scale * np.cos(pi * x) * np.cos(pi * y),
                       lambda x, y: (-scale * pi * np.sin(pi * x) * np.cos(pi * y),
                                     -scale * pi * np.cos(pi * x) * np.sin(pi * y)),
                       name=f"{scale}*cos(pi x)cos(pi y)")


def _mms_source(eps_val, u: ScalarField, laplacian_factor):
    """``k1 = -eps lap(u) + exp(u) - exp(-u)`` for ``lap(u) = -factor * u``."""
    return ScalarField(lambda x, y: eps_val * laplacian_factor * u.func(x, y)
                       + 2.0 * np.sinh(u.func(x, y)))


def _two_layer(t1, t2, boundary=None):
    kw = {} if boundary is None else {"boundary": boundary}
    return LayeredLayout(0.0, 1.0, (Layer(0.0, 0.5, t1), Layer(0.5, 1.0, t2)), **kw)


MMS_CASES = ("const_eps", "piecewise_eps", "nested", "patch")


def mms_problem(case_id: str):
    """Manufactured problem ``(problem, exact, layout)`` on the unit square.

    * ``const_eps``: ``u = cos(pi x) cos(pi y)``, eps = 1, layers meshed
      3K/2K transversally (nonmatching interface).
    * ``piecewise_eps``: eps = 1 / 5 below / above ``y = 1/2``; the upper
      piece of ``u`` is scaled by 1/5 so that ``u`` and ``eps du/dy`` are
      continuous at the interface.
    * ``nested``: ``u = 1 + cos(pi x) sin(pi y)`` with constant Dirichlet
      data per contact, layers meshed 2K/K so the traces nest.
    * ``patch``: linear problem with affine ``u = 2x + 3y - 1``, Dirichlet
      on all sides, 3K/2K meshes.
    """
    pi2 = 2.0 * np.pi**2
    if case_id == "const_eps":
        u = _cos_cos()
        prob = ProblemSpec(eps=1.0, k1=_mms_source(1.0, u, pi2), boundary=u)
        return prob, u, _two_layer(3, 2)
    if case_id == "piecewise_eps":
        lower, upper = _cos_cos(1.0), _cos_cos(0.2)
        exact = PiecewiseField([lower, upper])
        k1 = PiecewiseField([_mms_source(1.0, lower, pi2), _mms_source(5.0, upper, pi2)])
        prob = ProblemSpec(eps=PiecewiseField([1.0, 5.0]), k1=k1, boundary=exact)
        return prob, exact, _two_layer(3, 2)
    if case_id == "nested":
        pi = np.pi
        u = ScalarField(lambda x, y: 1.0 + np.cos(pi * x) * np.sin(pi * y),
                        lambda x, y: (-pi * np.sin(pi * x) * np.sin(pi * y),
                                      pi * np.cos(pi * x) * np.cos(pi * y)),
                        name="1+cos(pi x)sin(pi y)")
        k1 = ScalarField(lambda x, y: pi2 * (u.func(x, y) - 1.0) + 2.0 * np.sinh(u.func(x, y)))
        prob = ProblemSpec(eps=1.0, k1=k1, boundary={"bottom": 1.0, "top": 1.0})
        return prob, u, _two_layer(2, 1)
    if case_id == "patch":
        u = ScalarField(lambda x, y: 2.0 * x + 3.0 * y - 1.0,
                        lambda x, y: (np.full(np.shape(x), 2.0), np.full(np.shape(y), 3.0)),
                        name="2x+3y-1")
        bc = {s: Dirichlet("all") for s in ("bottom", "top", "left", "right")}
        prob = ProblemSpec(eps=1.0, k1=0.0, boundary={"all": u}, linear=True)
        return prob, u, _two_layer(3, 2, boundary=bc)
    raise UnknownCase(f"unknown manufactured case {case_id!r}; known: {MMS_CASES}")


# device analogs ----------------------------------------------------------

def pn_analog(doping: float = 1.0):
    """Dimensionless p-n junction: n layer ``[0, 0.6]`` (3K transversal
    cells), p layer ``[0.6, 1]`` (2K), ohmic contacts at the ends."""
    layout = LayeredLayout(0.0, 1.0, (Layer(0.0, 0.6, 3), Layer(0.6, 1.0, 2)))
    a = float(np.arcsinh(doping / 2.0))
    prob = ProblemSpec(eps=1.0, k1=layout.layer_field([doping, -doping]),
                       boundary={"bottom": a, "top": -a})
    return prob, layout


def qw_analog(doping: float = 10.0, well_eps: float = 1.2):
    """Single quantum well: n, n-near, undoped well, p-near, p layers.

    The two thin flanking layers and the well get K longitudinal cells
    each, so the junction region is refined automatically.
    """
    layers = (Layer(0.0, 0.4, 2), Layer(0.4, 0.48, 3), Layer(0.48, 0.52, 2),
              Layer(0.52, 0.6, 3), Layer(0.6, 1.0, 2))
    layout = LayeredLayout(0.0, 1.0, layers)
    a = float(np.arcsinh(doping / 2.0))
    prob = ProblemSpec(eps=layout.layer_field([1.0, 1.0, well_eps, 1.0, 1.0]),
                       k1=layout.layer_field([doping, doping, 0.0, -doping, -doping]),
                       boundary={"bottom": a, "top": -a})
    return prob, layout


def transverse_variation(space: CompositeSpace, coeffs: np.ndarray) -> float:
    """Largest max-minus-min of nodal values along any mesh row."""
    out = 0.0
    for i, m in enumerate(space.meshes):
        U = coeffs[space.dof_slice(i)].reshape(m.ny + 1, m.nx + 1)
        out = max(out, float(np.max(U.max(axis=1) - U.min(axis=1))))
    return out


# convergence studies ------------------------------------------------------

@dataclass
class ConvergenceRow:
    K: int
    dofs: int
    err_L2: float
    ratio_L2: float | None
    err_H1: float
    ratio_H1: float | None
    err_broken: float | None
    newton_iters: int
    seconds: float
    ratio_broken: float | None = None
    error: str | None = None

    CSV_COLUMNS = ("K", "dofs", "err_L2", "ratio_L2", "err_H1", "ratio_H1",
                   "err_broken", "newton_iters", "seconds")

    def csv_values(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(prev, cur):
    if prev is None or cur is None or not np.isfinite(prev) or not np.isfinite(cur) or cur == 0:
        return None
    return prev / cur


def convergence_study(problem: ProblemSpec, layout: LayeredLayout, method: MethodSpec,
                      K_list: Sequence[int], reference, settings: SolveSettings | None = None,
                      on_row=None, keep_solutions: bool = False):
    """Solve at each K and tabulate errors and error ratios ``e_K / e_2K``.

    A solver failure fills its row with NaN and the study continues. With
    ``reference=None`` only iteration counts and timings are recorded.
    """
    K_list = list(K_list)
    for a, b in zip(K_list[:-1], K_list[1:]):
        if b != 2 * a:
            raise ValueError("each K must double the previous one")
    rows, solutions = [], []
    prev = None
    for K in K_list:
        t0 = time.perf_counter()
        space = layout.space(K)
        try:
            u, rep = newton_solve(space, method, problem, settings=settings)
            if reference is None:
                l2 = h1 = br = math.nan
            else:
                l2, h1, br = compute_error(space, u, reference, method, problem.eps)
            iters, err = rep.iterations, None
        except CompositeDGError as exc:
            log.warning("K=%d failed: %s", K, exc)
            u, l2, h1, br, iters, err = None, math.nan, math.nan, math.nan, -1, str(exc)
        row = ConvergenceRow(K, space.total_dofs, l2,
                             _ratio(prev.err_L2, l2) if prev else None, h1,
                             _ratio(prev.err_H1, h1) if prev else None, br, iters,
                             time.perf_counter() - t0,
                             _ratio(prev.err_broken, br) if prev else None, err)
        rows.append(row)
        if keep_solutions:
            solutions.append((space, u))
        if on_row is not None:
            on_row(row)
        prev = row
    return (rows, solutions) if keep_solutions else rows


def observed_order(rows: Sequence[ConvergenceRow], which: str = "H1") -> float:
    """``log2`` of the last error ratio in the table."""
    ratio = getattr(rows[-1], f"ratio_{which}")
    if ratio is None or ratio <= 0:
        return math.nan
    return math.log2(ratio)
