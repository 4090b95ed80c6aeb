"""Composite P1 space: one continuous P1 space per subdomain, glued
discontinuously across coarse edges.

Degrees of freedom are numbered subdomain-major, then by the row-major
vertex index of each subdomain mesh. Vertices on an interface therefore
carry one DOF per side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .exceptions import EvaluationError, OutOfSubdomainError
from .geometry import (CoarseGrid, InterfaceSegment, SubdomainMesh,
                       build_subdomain_mesh, merge_interface_breakpoints)

__all__ = ["ScalarField", "PiecewiseField", "CompositeSpace", "MeshData",
           "interpolate", "evaluate", "evaluate_gradient", "trace_pair",
           "build_nested_conforming_check", "as_field"]


class ScalarField:
    """Scalar function of ``(x, y)``, vectorized over numpy arrays.

    ``grad`` returns ``(gx, gy)``. The subdomain index passed to
    :meth:`value` is ignored; see :class:`PiecewiseField` for fields that
    differ between subdomains.
    """

    def __init__(self, func: Callable, grad: Callable | None = None, name: str = ""):
        self.func = func
        self.grad = grad
        self.name = name

    @classmethod
    def constant(cls, c: float) -> "ScalarField":
        c = float(c)
        f = cls(lambda x, y: np.full(np.broadcast(x, y).shape, c),
                lambda x, y: (np.zeros(np.broadcast(x, y).shape),) * 2,
                name=repr(c))
        f.const_value = c
        return f

    def value(self, i: int, x, y):
        try:
            out = self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        except Exception as exc:  # noqa: BLE001 - user callables may raise anything
            raise EvaluationError(f"field {self.name or self.func} failed: {exc}") from exc
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape)

    def gradient(self, i: int, x, y):
        if self.grad is None:
            raise EvaluationError(f"field {self.name or self.func} has no gradient")
        gx, gy = self.grad(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(gx, shape).astype(float), np.broadcast_to(gy, shape).astype(float)

    def bounds(self, i: int | None = None):
        c = getattr(self, "const_value", None)
        return (c, c) if c is not None else None

    def __repr__(self):
        return f"ScalarField({self.name or self.func!r})"


class PiecewiseField:
    """One :class:`ScalarField` per subdomain, evaluated one-sided."""

    def __init__(self, pieces: Sequence[ScalarField | float]):
        self.pieces = [as_field(p) for p in pieces]

    def value(self, i: int, x, y):
        return self.pieces[i].value(i, x, y)

    def gradient(self, i: int, x, y):
        return self.pieces[i].gradient(i, x, y)

    def bounds(self, i: int | None = None):
        if i is not None:
            return self.pieces[i].bounds(i)
        b = [p.bounds(k) for k, p in enumerate(self.pieces)]
        if any(v is None for v in b):
            return None
        return min(v[0] for v in b), max(v[1] for v in b)

    def __repr__(self):
        return f"PiecewiseField({self.pieces!r})"


def as_field(f) -> ScalarField | PiecewiseField:
    if isinstance(f, (ScalarField, PiecewiseField)) or hasattr(f, "value"):
        return f
    if callable(f):
        return ScalarField(f)
    return ScalarField.constant(f)


@dataclass(frozen=True)
class MeshData:
    """Per-triangle geometry of one subdomain mesh, with global DOFs."""

    dofs: np.ndarray      # (ntri, 3)
    grads: np.ndarray     # (ntri, 3, 2) basis gradients
    area: np.ndarray      # (ntri,)
    coords: np.ndarray    # (ntri, 3, 2)


@dataclass(frozen=True, eq=False)
class CompositeSpace:
    grid: CoarseGrid
    meshes: tuple[SubdomainMesh, ...]
    offsets: tuple[int, ...] = field(init=False)
    total_dofs: int = field(init=False)

    def __post_init__(self):
        offs, n = [], 0
        for i, m in enumerate(self.meshes):
            if m.owner != i:
                raise ValueError("meshes must be ordered by subdomain index")
            offs.append(n)
            n += m.n_vertices
        object.__setattr__(self, "offsets", tuple(offs))
        object.__setattr__(self, "total_dofs", n)

    @classmethod
    def build(cls, grid: CoarseGrid, divisions: Sequence[tuple[int, int]]) -> "CompositeSpace":
        meshes = tuple(build_subdomain_mesh(r, nx, ny, owner=i)
                       for i, (r, (nx, ny)) in enumerate(zip(grid.subdomains, divisions)))
        return cls(grid, meshes)

    def dof_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.meshes[i].n_vertices)

    @property
    def n_subdomains(self) -> int:
        return len(self.meshes)

    @property
    def h(self) -> np.ndarray:
        return np.array([m.h for m in self.meshes])

    @cached_property
    def segments(self) -> dict[int, list[InterfaceSegment]]:
        """Segment decomposition of every Dirichlet and interface edge."""
        out = {}
        for k in self.grid.penalized_edges:
            e = self.grid.edges[k]
            mb = self.meshes[e.owners[1]] if e.is_interface else None
            out[k] = merge_interface_breakpoints(e, self.meshes[e.owners[0]], mb, edge_index=k)
        return out

    def mesh_data(self, i: int) -> MeshData:
        return self._mesh_data[i]

    @cached_property
    def _mesh_data(self) -> list[MeshData]:
        out = []
        for i, m in enumerate(self.meshes):
            coords = m.vertices[m.triangles]
            x, y = coords[..., 0], coords[..., 1]
            det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
            # gradient of barycentric l_k: rotate opposite edge by 90 deg / det
            grads = np.empty(coords.shape)
            for k in range(3):
                a, b = (k + 1) % 3, (k + 2) % 3
                grads[:, k, 0] = (y[:, a] - y[:, b]) / det
                grads[:, k, 1] = (x[:, b] - x[:, a]) / det
            out.append(MeshData(m.triangles + self.offsets[i], grads, 0.5 * det, coords))
        return out

    @cached_property
    def nested_mode(self) -> bool:
        return build_nested_conforming_check(self)

    def quad_points(self, i: int, rule):
        """Physical quadrature points of subdomain ``i``, shape ``(ntri, nq)``."""
        c = self.mesh_data(i).coords
        x = np.einsum("qk,tk->tq", rule.points, c[..., 0])
        y = np.einsum("qk,tk->tq", rule.points, c[..., 1])
        return x, y


def interpolate(space: CompositeSpace, f) -> np.ndarray:
    """Nodal interpolant; each subdomain samples its own piece of ``f``."""
    f = as_field(f)
    out = np.empty(space.total_dofs)
    for i, m in enumerate(space.meshes):
        out[space.dof_slice(i)] = f.value(i, m.vertices[:, 0], m.vertices[:, 1])
    if not np.all(np.isfinite(out)):
        raise EvaluationError("interpolated field has non-finite values")
    return out


def _check_inside(space, i, x, y):
    if not space.grid.subdomains[i].contains(x, y):
        raise OutOfSubdomainError(f"point outside subdomain {i}")


def evaluate(space: CompositeSpace, coeffs: np.ndarray, i: int, x, y):
    """Value of the subdomain-``i`` piece at points inside ``Omega_i``."""
    _check_inside(space, i, x, y)
    m = space.meshes[i]
    tri = m.locate(x, y)
    lam = m.barycentric(tri, x, y)
    local = coeffs[space.dof_slice(i)][m.triangles[tri]]
    return np.sum(lam * local, axis=-1)


def evaluate_gradient(space: CompositeSpace, coeffs: np.ndarray, i: int, x, y):
    _check_inside(space, i, x, y)
    m = space.meshes[i]
    tri = m.locate(x, y)
    md = space.mesh_data(i)
    g = md.grads[tri]
    local = coeffs[md.dofs[tri]]
    return np.sum(g[..., 0] * local, axis=-1), np.sum(g[..., 1] * local, axis=-1)


def _side_trace(space, coeffs, sub, elem, x, y):
    m = space.meshes[sub]
    lam = m.barycentric(elem, x, y)
    local = coeffs[space.mesh_data(sub).dofs[elem]]
    return np.sum(lam * local, axis=-1)


def trace_pair(space: CompositeSpace, coeffs: np.ndarray, segment: InterfaceSegment, t):
    """One-sided traces at edge parameter ``t`` inside ``segment``.

    Returns ``(value_i, value_j)``; ``value_j`` is ``None`` on boundary
    edges. Then ``[u] = value_i - value_j`` (or ``value_i``) and ``{u}``
    is the mean (or ``value_i``).
    """
    e = space.grid.edges[segment.edge]
    t = np.asarray(t, dtype=float)
    if np.any(t < segment.t0 - 1e-12) or np.any(t > segment.t1 + 1e-12):
        raise ValueError("t outside the segment")
    x, y = e.point(t)
    va = _side_trace(space, coeffs, e.owners[0], segment.elem_a, x, y)
    if segment.elem_b is None:
        return va, None
    vb = _side_trace(space, coeffs, e.owners[1], segment.elem_b, x, y)
    return va, vb


def jump_average(values):
    va, vb = values
    if vb is None:
        return va, va
    return va - vb, 0.5 * (va + vb)


def build_nested_conforming_check(space: CompositeSpace, tol: float = 1e-12) -> bool:
    """True when, on every interface, the coarser side's trace nodes are a
    subset of the finer side's, so a conforming P1 subspace exists."""
    for k in space.grid.interface_edges:
        e = space.grid.edges[k]
        params = []
        for owner, side in zip(e.owners, e.sides):
            m = space.meshes[owner]
            pts = m.vertices[m.traces[side]]
            d = np.array(e.end) - np.array(e.start)
            params.append((pts - np.array(e.start)) @ d / (e.length ** 2))
        coarse, fine = sorted(params, key=len)
        gap = np.min(np.abs(coarse[:, None] - fine[None, :]), axis=1)
        if np.any(gap > tol):
            return False
    return True
