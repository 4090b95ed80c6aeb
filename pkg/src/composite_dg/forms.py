"""Assembly of the bilinear, nonlinear and load terms of both composite
interior penalty methods.

Matrices follow the test-by-trial convention ``M[k, l] = form(phi_l, phi_k)``,
so ``form(u, v) = v @ M @ u``. The methods assemble

* CWOPSIP: ``A + J_2``, load ``C + I_2``
* CSIPG:   ``A + D + E + J_1``, load ``C + F + I_1``

where ``A`` is the subdomain stiffness, ``D``/``E`` the symmetric flux
terms, ``J_r`` the jump penalty, ``C`` the source load, ``F`` the flux
term of the Dirichlet data and ``I_r`` its penalty term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .exceptions import NonpositiveEpsilon, OverflowGuard, VariantError
from .geometry import DIRICHLET, CoarseEdge
from .problem import ProblemSpec
from .quadrature import segment_rule, triangle_rule
from .space import CompositeSpace, as_field

__all__ = [
    "CWOPSIP", "CSIPG", "MethodSpec", "penalty", "penalties",
    "assemble_A", "assemble_J", "assemble_D", "assemble_B", "assemble_mass",
    "assemble_load", "assemble_rhs", "broken_norm", "broken_norm_sq",
    "edge_quadrature", "EXP_LIMIT",
]

CWOPSIP = "cwopsip"
CSIPG = "csipg"
EXP_LIMIT = 700.0

VOLUME_DEGREE = 4
EDGE_DEGREE = 3
DATA_EDGE_DEGREE = 5


@dataclass(frozen=True)
class MethodSpec:
    """Discretization variant and penalty parameters.

    ``sigma`` is a single value, a mapping from coarse edge index to value,
    or ``None`` for the default policy (``10 * eps_max`` for CSIPG,
    ``eps_max`` for CWOPSIP).
    """

    variant: str = CSIPG
    sigma: float | Mapping[int, float] | None = None

    def __post_init__(self):
        v = self.variant.lower()
        if v not in (CWOPSIP, CSIPG):
            raise VariantError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "variant", v)

    @property
    def r(self) -> int:
        return 2 if self.variant == CWOPSIP else 1

    @property
    def include_flux(self) -> bool:
        return self.variant == CSIPG

    def default_sigma(self, eps_max: float) -> float:
        return 10.0 * eps_max if self.variant == CSIPG else eps_max

    def sigma_for(self, edge: int, eps_max: float) -> float:
        if self.sigma is None:
            s = self.default_sigma(eps_max)
        elif isinstance(self.sigma, Mapping):
            s = self.sigma.get(edge, self.default_sigma(eps_max))
        else:
            s = float(self.sigma)
        if not s > 0:
            raise ValueError(f"penalty parameter must be positive, got {s}")
        return float(s)


def penalty(e: CoarseEdge, r: int, sigma: float, h) -> float:
    """``eta = 2 sigma {h^-r}`` for one edge; ``h`` is indexed by subdomain."""
    if e.is_interface:
        i, j = e.owners
        return sigma * (h[i] ** -r + h[j] ** -r)
    return 2.0 * sigma * h[e.owners[0]] ** -r


def penalties(space: CompositeSpace, method: MethodSpec, eps_max: float = 1.0) -> dict[int, float]:
    h = space.h
    return {k: penalty(space.grid.edges[k], method.r, method.sigma_for(k, eps_max), h)
            for k in space.grid.penalized_edges}


class SparsityPattern:
    """Fixed COO index set compressed once; later fills only sum values."""

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        keys = rows * shape[1] + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.shape = shape
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32 if shape[1] < 2**31 else np.int64)
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(self.indices.dtype)
        self.nnz = len(uniq)

    def fill(self, values) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=np.asarray(values, dtype=float).ravel(),
                           minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def _cache(space: CompositeSpace) -> dict:
    c = space.__dict__.get("_assembly_cache")
    if c is None:
        c = {}
        space.__dict__["_assembly_cache"] = c
    return c


def _volume_pattern(space: CompositeSpace) -> SparsityPattern:
    c = _cache(space)
    if "volume_pattern" not in c:
        dofs = np.concatenate([space.mesh_data(i).dofs for i in range(space.n_subdomains)])
        rows = np.repeat(dofs, 3, axis=1)
        cols = np.tile(dofs, (1, 3))
        c["volume_pattern"] = SparsityPattern(rows, cols, (space.total_dofs,) * 2)
    return c["volume_pattern"]


def _field_at_quad(space, f, rule, key=None):
    """Values of ``f`` at the volume quadrature points of each subdomain."""
    c = _cache(space)
    ck = ("qvals", id(f), rule.degree) if key is None else key
    if ck in c and c[ck][0] is f:
        return c[ck][1]
    vals = []
    for i in range(space.n_subdomains):
        x, y = space.quad_points(i, rule)
        vals.append(np.asarray(f.value(i, x, y), dtype=float))
    c[ck] = (f, vals)
    return vals


def assemble_A(space: CompositeSpace, eps) -> sp.csr_matrix:
    """Stiffness ``sum_i int_{Omega_i} eps grad u . grad phi``."""
    eps = as_field(eps)
    rule = triangle_rule(VOLUME_DEGREE)
    eps_q = _field_at_quad(space, eps, rule)
    blocks = []
    for i in range(space.n_subdomains):
        if np.any(eps_q[i] <= 0):
            raise NonpositiveEpsilon(f"eps is not positive on subdomain {i}")
        md = space.mesh_data(i)
        eps_int = md.area * (eps_q[i] @ rule.weights)
        local = np.einsum("t,tad,tbd->tab", eps_int, md.grads, md.grads)
        blocks.append(local.reshape(-1, 9))
    return _volume_pattern(space).fill(np.concatenate(blocks))


def assemble_mass(space: CompositeSpace, coef_q=None) -> sp.csr_matrix:
    """Weighted mass matrix; ``coef_q`` holds per-subdomain quadrature values."""
    rule = triangle_rule(VOLUME_DEGREE)
    lam = rule.points
    blocks = []
    for i in range(space.n_subdomains):
        md = space.mesh_data(i)
        c = np.ones((len(md.area), len(rule.weights))) if coef_q is None else coef_q[i]
        wq = md.area[:, None] * rule.weights[None, :] * c
        local = np.einsum("tq,qa,qb->tab", wq, lam, lam)
        blocks.append(local.reshape(-1, 9))
    return _volume_pattern(space).fill(np.concatenate(blocks))


def assemble_load(space: CompositeSpace, f) -> np.ndarray:
    """Load vector ``int f phi_k`` with the volume rule."""
    f = as_field(f)
    rule = triangle_rule(VOLUME_DEGREE)
    f_q = _field_at_quad(space, f, rule)
    out = np.zeros(space.total_dofs)
    for i in range(space.n_subdomains):
        md = space.mesh_data(i)
        wq = md.area[:, None] * rule.weights[None, :] * f_q[i]
        local = wq @ rule.points
        out += np.bincount(md.dofs.ravel(), weights=local.ravel(), minlength=space.total_dofs)
    return out


def assemble_B(space: CompositeSpace, coeffs: np.ndarray, v_offset=0.0, w_offset=0.0,
               derivative: bool = True):
    """Carrier term ``b(u, phi_k) = int (exp(u - v) - exp(w - u)) phi_k`` and
    its derivative ``int (exp(u - v) + exp(w - u)) phi_k phi_l``.

    Raises :class:`OverflowGuard` when an exponent exceeds ``EXP_LIMIT``.
    """
    v_offset = as_field(v_offset)
    w_offset = as_field(w_offset)
    rule = triangle_rule(VOLUME_DEGREE)
    lam = rule.points
    v_q = _field_at_quad(space, v_offset, rule)
    w_q = _field_at_quad(space, w_offset, rule)
    vec = np.zeros(space.total_dofs)
    blocks = []
    for i in range(space.n_subdomains):
        md = space.mesh_data(i)
        u_q = coeffs[md.dofs] @ lam.T
        a = u_q - v_q[i]
        b = w_q[i] - u_q
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise OverflowGuard("non-finite potential at a quadrature point")
        if a.max() > EXP_LIMIT or b.max() > EXP_LIMIT:
            raise OverflowGuard("exponent exceeds the overflow limit")
        ea, eb = np.exp(a), np.exp(b)
        wq = md.area[:, None] * rule.weights[None, :]
        vec += np.bincount(md.dofs.ravel(), weights=((wq * (ea - eb)) @ lam).ravel(),
                           minlength=space.total_dofs)
        if derivative:
            local = np.einsum("tq,qa,qb->tab", wq * (ea + eb), lam, lam)
            blocks.append(local.reshape(-1, 9))
    if not derivative:
        return vec
    return vec, _volume_pattern(space).fill(np.concatenate(blocks))


@dataclass(frozen=True)
class EdgeQuadrature:
    """Quadrature points on all Dirichlet and interface edges.

    Each point carries six DOF slots (three per side; side ``b`` is zeroed
    on boundary edges) with the jump coefficients ``[phi]`` and the basis
    gradients needed for ``{eps grad phi . n}``.
    """

    edge: np.ndarray       # (nq,) coarse edge index
    weight: np.ndarray     # (nq,) rule weight times segment length
    x: np.ndarray
    y: np.ndarray
    dofs: np.ndarray       # (nq, 6)
    jump: np.ndarray       # (nq, 6)
    normal_grad: np.ndarray  # (nq, 6) grad phi . n (unweighted by eps)
    sub_a: np.ndarray
    sub_b: np.ndarray      # -1 on the boundary
    is_interface: np.ndarray


def edge_quadrature(space: CompositeSpace, degree: int = EDGE_DEGREE) -> EdgeQuadrature:
    c = _cache(space)
    key = ("edgeq", degree)
    if key in c:
        return c[key]
    rule = segment_rule(degree)
    nq = len(rule.weights)
    cols = {k: [] for k in ("edge", "weight", "x", "y", "dofs", "jump", "ng",
                            "sa", "sb", "itf")}
    for k, segs in space.segments.items():
        e = space.grid.edges[k]
        if not segs:
            continue
        t0 = np.array([s.t0 for s in segs])
        t1 = np.array([s.t1 for s in segs])
        t = t0[:, None] + (t1 - t0)[:, None] * rule.points[None, :]
        w = (t1 - t0)[:, None] * e.length * rule.weights[None, :]
        x, y = e.point(t)
        n = np.array(e.normal)
        ia = e.owners[0]
        ea = np.array([s.elem_a for s in segs])
        ma, mda = space.meshes[ia], space.mesh_data(ia)
        lam_a = ma.barycentric(np.repeat(ea[:, None], nq, axis=1), x, y)
        dofs_a = np.repeat(mda.dofs[ea][:, None, :], nq, axis=1)
        ng_a = np.repeat((mda.grads[ea] @ n)[:, None, :], nq, axis=1)
        if e.is_interface:
            ib = e.owners[1]
            eb = np.array([s.elem_b for s in segs])
            mb, mdb = space.meshes[ib], space.mesh_data(ib)
            lam_b = mb.barycentric(np.repeat(eb[:, None], nq, axis=1), x, y)
            dofs_b = np.repeat(mdb.dofs[eb][:, None, :], nq, axis=1)
            ng_b = np.repeat((mdb.grads[eb] @ n)[:, None, :], nq, axis=1)
            jump = np.concatenate([lam_a, -lam_b], axis=-1)
        else:
            ib = -1
            dofs_b = dofs_a
            ng_b = np.zeros_like(ng_a)
            jump = np.concatenate([lam_a, np.zeros_like(lam_a)], axis=-1)
        cols["edge"].append(np.full(t.size, k))
        cols["weight"].append(w.ravel())
        cols["x"].append(x.ravel())
        cols["y"].append(y.ravel())
        cols["dofs"].append(np.concatenate([dofs_a, dofs_b], axis=-1).reshape(-1, 6))
        cols["jump"].append(jump.reshape(-1, 6))
        cols["ng"].append(np.concatenate([ng_a, ng_b], axis=-1).reshape(-1, 6))
        cols["sa"].append(np.full(t.size, ia))
        cols["sb"].append(np.full(t.size, ib))
        cols["itf"].append(np.full(t.size, e.is_interface))
    if cols["edge"]:
        cat = {k: np.concatenate(v) for k, v in cols.items()}
    else:
        cat = {"edge": np.zeros(0, int), "weight": np.zeros(0), "x": np.zeros(0),
               "y": np.zeros(0), "dofs": np.zeros((0, 6), int), "jump": np.zeros((0, 6)),
               "ng": np.zeros((0, 6)), "sa": np.zeros(0, int), "sb": np.zeros(0, int),
               "itf": np.zeros(0, bool)}
    eq = EdgeQuadrature(cat["edge"], cat["weight"], cat["x"], cat["y"], cat["dofs"],
                        cat["jump"], cat["ng"], cat["sa"], cat["sb"], cat["itf"])
    c[key] = eq
    return eq


def _one_sided(f, sub, x, y):
    """Evaluate a field with a per-point subdomain index (``-1`` skipped)."""
    out = np.zeros(len(x))
    for i in np.unique(sub):
        if i < 0:
            continue
        m = sub == i
        out[m] = f.value(int(i), x[m], y[m])
    return out


def _flux_average(eq: EdgeQuadrature, eps) -> np.ndarray:
    """Coefficients of ``{eps grad phi . n}`` for the six DOF slots."""
    eps_a = _one_sided(eps, eq.sub_a, eq.x, eq.y)
    eps_b = _one_sided(eps, eq.sub_b, eq.x, eq.y)
    half = np.where(eq.is_interface, 0.5, 1.0)
    return np.concatenate([(half * eps_a)[:, None] * eq.normal_grad[:, :3],
                           (half * eps_b)[:, None] * eq.normal_grad[:, 3:]], axis=1)


def _edge_pattern(space: CompositeSpace, eq: EdgeQuadrature) -> SparsityPattern:
    c = _cache(space)
    key = ("edge_pattern", len(eq.edge))
    if key not in c:
        rows = np.repeat(eq.dofs, 6, axis=1)
        cols = np.tile(eq.dofs, (1, 6))
        c[key] = SparsityPattern(rows, cols, (space.total_dofs,) * 2)
    return c[key]


def assemble_J(space: CompositeSpace, method: MethodSpec, eps_max: float = 1.0,
               eta: Mapping[int, float] | None = None) -> sp.csr_matrix:
    """Jump penalty ``sum_e eta_e int_e [u][phi]`` over Dirichlet and interface edges."""
    eq = edge_quadrature(space)
    eta = penalties(space, method, eps_max) if eta is None else eta
    eta_q = np.array([eta[k] for k in eq.edge]) if len(eq.edge) else np.zeros(0)
    vals = (eta_q * eq.weight)[:, None, None] * eq.jump[:, :, None] * eq.jump[:, None, :]
    return _edge_pattern(space, eq).fill(vals.reshape(len(eq.edge), -1))


def assemble_D(space: CompositeSpace, eps, method: MethodSpec | None = None) -> sp.csr_matrix:
    """Flux term ``D[k, l] = -sum_e int_e {eps grad phi_l . n} [phi_k]``.

    Its transpose is the symmetrizing term ``E``.
    """
    if method is not None and not method.include_flux:
        raise VariantError("flux terms belong to CSIPG only")
    eq = edge_quadrature(space)
    flux = _flux_average(eq, as_field(eps))
    vals = -eq.weight[:, None, None] * eq.jump[:, :, None] * flux[:, None, :]
    return _edge_pattern(space, eq).fill(vals.reshape(len(eq.edge), -1))


def _dirichlet_data(space: CompositeSpace, problem: ProblemSpec, degree: int):
    eq = edge_quadrature(space, degree)
    mask = ~eq.is_interface
    g = np.zeros(len(eq.edge))
    for k in np.unique(eq.edge[mask]):
        m = eq.edge == k
        f = problem.boundary_field(space.grid.edges[k])
        g[m] = f.value(space.grid.edges[k].owners[0], eq.x[m], eq.y[m])
    return eq, mask, g


def assemble_rhs(space: CompositeSpace, method: MethodSpec, problem: ProblemSpec,
                 eps_max: float | None = None) -> np.ndarray:
    """Load ``int k1 phi + sum_{Gamma_D} eta int u_D phi`` plus, for CSIPG,
    ``- sum_{Gamma_D} int eps grad phi . n u_D``.

    The flux term of the data is taken over Dirichlet edges only: the data
    is continuous, so its jump vanishes on interfaces.
    """
    if eps_max is None:
        eps_max = problem.eps_max(space)
    out = assemble_load(space, problem.k1)
    eq, mask, g = _dirichlet_data(space, problem, DATA_EDGE_DEGREE)
    if not np.any(mask):
        return out
    eta = penalties(space, method, eps_max)
    eta_q = np.array([eta[k] for k in eq.edge[mask]])
    w = eq.weight[mask] * g[mask]
    dofs = eq.dofs[mask][:, :3]
    out += np.bincount(dofs.ravel(), weights=((eta_q * w)[:, None] * eq.jump[mask][:, :3]).ravel(),
                       minlength=space.total_dofs)
    if method.include_flux:
        flux = _flux_average(eq, problem.eps)[mask][:, :3]
        out -= np.bincount(dofs.ravel(), weights=(w[:, None] * flux).ravel(),
                           minlength=space.total_dofs)
    return out


def broken_norm_sq(space: CompositeSpace, method: MethodSpec, coeffs: np.ndarray,
                   eps=1.0, against=None, eps_max: float | None = None) -> float:
    """Squared broken norm ``sum_i int eps |grad u|^2 + sum_e eta_e int_e [u]^2``.

    Evaluated pointwise from ``coeffs`` (no assembled matrices). With
    ``against`` set to an exact field, measures ``against - u_h`` using
    one-sided exact traces.
    """
    eps = as_field(eps)
    if eps_max is None:
        eps_max = ProblemSpec(eps=eps).eps_max(space)
    exact = as_field(against) if against is not None else None
    rule = triangle_rule(6 if exact is not None else VOLUME_DEGREE)
    total = 0.0
    for i in range(space.n_subdomains):
        md = space.mesh_data(i)
        x, y = space.quad_points(i, rule)
        e_q = eps.value(i, x, y)
        gh = np.einsum("tkd,tk->td", md.grads, coeffs[md.dofs])
        gx = np.broadcast_to(gh[:, 0:1], x.shape)
        gy = np.broadcast_to(gh[:, 1:2], x.shape)
        if exact is not None:
            ex, ey = exact.gradient(i, x, y)
            gx, gy = ex - gx, ey - gy
        total += float(np.sum(md.area[:, None] * rule.weights[None, :] * e_q * (gx**2 + gy**2)))

    eq = edge_quadrature(space, DATA_EDGE_DEGREE if exact is not None else EDGE_DEGREE)
    if len(eq.edge):
        eta = penalties(space, method, eps_max)
        eta_q = np.array([eta[k] for k in eq.edge])
        vals = coeffs[eq.dofs]
        lam_a, lam_b = eq.jump[:, :3], -eq.jump[:, 3:]
        ua = np.sum(lam_a * vals[:, :3], axis=1)
        ub = np.sum(lam_b * vals[:, 3:], axis=1)
        if exact is not None:
            ua = _one_sided(exact, eq.sub_a, eq.x, eq.y) - ua
            ub = _one_sided(exact, eq.sub_b, eq.x, eq.y) - ub
        jump = np.where(eq.is_interface, ua - ub, ua)
        total += float(np.sum(eta_q * eq.weight * jump**2))
    return total


def broken_norm(space: CompositeSpace, method: MethodSpec, coeffs: np.ndarray,
                eps=1.0, against=None, eps_max: float | None = None) -> float:
    return float(np.sqrt(broken_norm_sq(space, method, coeffs, eps, against, eps_max)))
