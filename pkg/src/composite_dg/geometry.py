"""Coarse rectangular partitions, structured subdomain meshes and the
segment decomposition of coarse edges used for cross-mesh edge integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .exceptions import (AlignmentError, GeometryError, HangingEdgeError,
                         OverlapError, StraddleError)

__all__ = [
    "Rect", "CoarseEdge", "CoarseGrid", "SubdomainMesh", "InterfaceSegment",
    "Dirichlet", "NEUMANN", "BoundaryPiece",
    "build_coarse_grid", "classify_edges", "build_subdomain_mesh",
    "merge_interface_breakpoints",
    "DIRICHLET", "INTERFACE",
]

DIRICHLET = "dirichlet"
NEUMANN_KIND = "neumann"
INTERFACE = "interface"

SIDES = ("bottom", "right", "top", "left")
REL_TOL = 1e-12


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def side(self, name: str) -> tuple[tuple[float, float], tuple[float, float]]:
        """Endpoints of a side, ordered by increasing coordinate."""
        if name == "bottom":
            return (self.x0, self.y0), (self.x1, self.y0)
        if name == "top":
            return (self.x0, self.y1), (self.x1, self.y1)
        if name == "left":
            return (self.x0, self.y0), (self.x0, self.y1)
        if name == "right":
            return (self.x1, self.y0), (self.x1, self.y1)
        raise ValueError(f"unknown side {name!r}")

    def contains(self, x, y, tol: float = 1e-12) -> bool:
        scale = max(self.width, self.height)
        t = tol * scale
        return bool(np.all((x >= self.x0 - t) & (x <= self.x1 + t)
                           & (y >= self.y0 - t) & (y <= self.y1 + t)))


_OUTWARD = {"bottom": (0.0, -1.0), "top": (0.0, 1.0),
            "left": (-1.0, 0.0), "right": (1.0, 0.0)}


@dataclass(frozen=True)
class CoarseEdge:
    """One edge of the coarse grid.

    ``start``/``end`` are ordered by increasing coordinate and define the
    edge parameter ``t in [0, 1]``. For an interface, ``owners = (i, j)``
    with ``i < j`` and ``normal`` points from subdomain ``i`` into ``j``;
    on the boundary ``normal`` is the outward normal of the domain.
    ``sides`` names the side of each owner the edge lies on.
    """

    start: tuple[float, float]
    end: tuple[float, float]
    kind: str
    owners: tuple[int, ...]
    normal: tuple[float, float]
    sides: tuple[str, ...]
    label: str | None = None

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def is_interface(self) -> bool:
        return self.kind == INTERFACE

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return (self.start[0] + t * (self.end[0] - self.start[0]),
                self.start[1] + t * (self.end[1] - self.start[1]))


@dataclass(frozen=True)
class CoarseGrid:
    domain: Rect
    subdomains: tuple[Rect, ...]
    edges: tuple[CoarseEdge, ...]
    neighbors: tuple[frozenset, ...]

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    def edges_of_kind(self, kind: str) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.kind == kind]

    @property
    def dirichlet_edges(self) -> list[int]:
        return self.edges_of_kind(DIRICHLET)

    @property
    def interface_edges(self) -> list[int]:
        return self.edges_of_kind(INTERFACE)

    @property
    def neumann_edges(self) -> list[int]:
        return self.edges_of_kind(NEUMANN_KIND)

    @property
    def penalized_edges(self) -> list[int]:
        """Edges of Gamma_D and Gamma_I, in grid order."""
        return [k for k, e in enumerate(self.edges) if e.kind in (DIRICHLET, INTERFACE)]


def _check_cuts(cuts, lo, hi, name):
    cuts = [float(c) for c in cuts]
    prev = lo
    for c in cuts:
        if not (prev < c < hi):
            raise GeometryError(f"{name} must be strictly increasing inside ({lo}, {hi})")
        prev = c
    return [lo, *cuts, hi]


def build_coarse_grid(domain: Rect, x_cuts: Sequence[float] = (),
                      y_cuts: Sequence[float] = (),
                      merge_spec: Sequence[Sequence[tuple[int, int]]] | None = None
                      ) -> CoarseGrid:
    """Partition ``domain`` by the tensor grid of cuts.

    ``merge_spec`` lists groups of cell indices ``(ix, iy)`` to fuse into a
    single subdomain; each group must form a rectangle. Subdomains are
    ordered bottom-to-top, then left-to-right, by their lower-left cell.
    All boundary edges come out Neumann; use :func:`classify_edges` to
    assign Dirichlet parts.
    """
    xs = _check_cuts(x_cuts, domain.x0, domain.x1, "x_cuts")
    ys = _check_cuts(y_cuts, domain.y0, domain.y1, "y_cuts")
    ncx, ncy = len(xs) - 1, len(ys) - 1

    owner = -np.ones((ncx, ncy), dtype=int)
    blocks = []  # (ix0, ix1, iy0, iy1) inclusive cell ranges
    for group in merge_spec or ():
        cells = {(int(a), int(b)) for a, b in group}
        if len(cells) != len(list(group)):
            raise OverlapError("duplicate cell in merge group")
        for ix, iy in cells:
            if not (0 <= ix < ncx and 0 <= iy < ncy):
                raise OverlapError(f"cell {(ix, iy)} outside the grid")
            if owner[ix, iy] >= 0:
                raise OverlapError(f"cell {(ix, iy)} used by two merge groups")
        ix0 = min(c[0] for c in cells)
        ix1 = max(c[0] for c in cells)
        iy0 = min(c[1] for c in cells)
        iy1 = max(c[1] for c in cells)
        if len(cells) != (ix1 - ix0 + 1) * (iy1 - iy0 + 1):
            raise OverlapError(f"merge group {sorted(cells)} is not a rectangle")
        for ix, iy in cells:
            owner[ix, iy] = len(blocks)
        blocks.append((ix0, ix1, iy0, iy1))
    for iy in range(ncy):
        for ix in range(ncx):
            if owner[ix, iy] < 0:
                owner[ix, iy] = len(blocks)
                blocks.append((ix, ix, iy, iy))

    blocks.sort(key=lambda b: (b[2], b[0]))
    rects = tuple(Rect(xs[b[0]], xs[b[1] + 1], ys[b[2]], ys[b[3] + 1]) for b in blocks)

    total = sum(r.area for r in rects)
    if abs(total - domain.area) > 1e-12 * domain.area:
        raise OverlapError("subdomains do not tile the domain")

    edges = _build_edges(domain, rects)
    nbrs = [set() for _ in rects]
    for e in edges:
        if e.is_interface:
            i, j = e.owners
            nbrs[i].add(j)
            nbrs[j].add(i)
    return CoarseGrid(domain, rects, tuple(edges), tuple(frozenset(s) for s in nbrs))


def _close(a, b, scale):
    return abs(a - b) <= REL_TOL * scale


def _build_edges(domain: Rect, rects: Sequence[Rect]) -> list[CoarseEdge]:
    scale = max(domain.width, domain.height)
    edges = []
    for i, r in enumerate(rects):
        for side in SIDES:
            p0, p1 = r.side(side)
            on_boundary = (
                (side == "bottom" and _close(r.y0, domain.y0, scale))
                or (side == "top" and _close(r.y1, domain.y1, scale))
                or (side == "left" and _close(r.x0, domain.x0, scale))
                or (side == "right" and _close(r.x1, domain.x1, scale)))
            if on_boundary:
                edges.append(CoarseEdge(p0, p1, NEUMANN_KIND, (i,), _OUTWARD[side], (side,)))
                continue
            if side not in ("top", "right"):
                continue  # interfaces are discovered from the lower/left owner
            opposite = "bottom" if side == "top" else "left"
            touching = []
            for j, q in enumerate(rects):
                if j == i:
                    continue
                q0, q1 = q.side(opposite)
                if side == "top":
                    if not _close(q.y0, r.y1, scale):
                        continue
                    overlap = min(r.x1, q.x1) - max(r.x0, q.x0)
                else:
                    if not _close(q.x0, r.x1, scale):
                        continue
                    overlap = min(r.y1, q.y1) - max(r.y0, q.y0)
                if overlap > REL_TOL * scale:
                    touching.append((j, q0, q1))
            if len(touching) != 1:
                raise HangingEdgeError(f"side {side} of subdomain {i} meets "
                                       f"{len(touching)} subdomains")
            j, q0, q1 = touching[0]
            if not (np.allclose(q0, p0, atol=REL_TOL * scale)
                    and np.allclose(q1, p1, atol=REL_TOL * scale)):
                raise HangingEdgeError(f"subdomains {i} and {j} share only part of an edge")
            a, b = (i, j) if i < j else (j, i)
            sides = (side, opposite) if i < j else (opposite, side)
            n = _OUTWARD[side] if i < j else _OUTWARD[opposite]
            edges.append(CoarseEdge(p0, p1, INTERFACE, (a, b), n, sides))
    return edges


@dataclass(frozen=True)
class Dirichlet:
    """Dirichlet condition tag; ``label`` names the data (e.g. a contact)."""

    label: str = "default"


NEUMANN = "neumann"


@dataclass(frozen=True)
class BoundaryPiece:
    """Condition on the sub-interval ``[lo, hi]`` of one domain side."""

    lo: float
    hi: float
    condition: Dirichlet | str


def _side_coord_range(edge: CoarseEdge, side: str):
    if side in ("bottom", "top"):
        return edge.start[0], edge.end[0]
    return edge.start[1], edge.end[1]


def classify_edges(grid: CoarseGrid,
                   boundary_spec: Mapping[str, Dirichlet | str | Sequence[BoundaryPiece]]
                   ) -> CoarseGrid:
    """Tag every boundary edge Dirichlet or Neumann.

    ``boundary_spec`` maps a side name to either one condition for the whole
    side or a list of :class:`BoundaryPiece`. Sides left out are Neumann.
    """
    dom = grid.domain
    scale = max(dom.width, dom.height)
    pieces: dict[str, list[BoundaryPiece]] = {}
    for side, spec in boundary_spec.items():
        if side not in SIDES:
            raise GeometryError(f"unknown side {side!r}")
        (a0, a1), (b0, b1) = dom.side(side)
        lo, hi = (a0, b0) if side in ("bottom", "top") else (a1, b1)
        if isinstance(spec, (Dirichlet, str)):
            pieces[side] = [BoundaryPiece(lo, hi, spec)]
        else:
            pieces[side] = sorted(spec, key=lambda p: p.lo)

    new_edges = []
    for e in grid.edges:
        if e.is_interface:
            new_edges.append(e)
            continue
        side = e.sides[0]
        cond = NEUMANN
        if side in pieces:
            lo, hi = _side_coord_range(e, side)
            hit = None
            for p in pieces[side]:
                overlap = min(hi, p.hi) - max(lo, p.lo)
                if overlap <= REL_TOL * scale:
                    continue
                if lo < p.lo - REL_TOL * scale or hi > p.hi + REL_TOL * scale:
                    raise StraddleError(f"edge {e.start}-{e.end} crosses a breakpoint "
                                        f"of side {side}; add a cut")
                hit = p
            if hit is not None:
                cond = hit.condition
        if isinstance(cond, Dirichlet):
            new_edges.append(replace(e, kind=DIRICHLET, label=cond.label))
        elif cond == NEUMANN:
            new_edges.append(replace(e, kind=NEUMANN_KIND, label=None))
        else:
            raise GeometryError(f"unknown boundary condition {cond!r}")
    return replace(grid, edges=tuple(new_edges))


@dataclass(frozen=True)
class SubdomainMesh:
    """Uniform right-triangle mesh of one subrectangle.

    Vertices are numbered row-major, ``v = j * (nx + 1) + i``; every cell is
    split along its lower-left to upper-right diagonal.
    """

    owner: int
    rect: Rect
    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    h: float
    traces: Mapping[str, np.ndarray] = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def dx(self) -> float:
        return self.rect.width / self.nx

    @property
    def dy(self) -> float:
        return self.rect.height / self.ny

    def cell_of(self, x, y):
        """Cell indices ``(i, j)`` containing points, clipped to the mesh."""
        i = np.clip(np.floor((np.asarray(x) - self.rect.x0) / self.dx), 0, self.nx - 1).astype(int)
        j = np.clip(np.floor((np.asarray(y) - self.rect.y0) / self.dy), 0, self.ny - 1).astype(int)
        return i, j

    def locate(self, x, y):
        """Index of a triangle containing each point."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i, j = self.cell_of(x, y)
        sx = (x - self.rect.x0) / self.dx - i
        sy = (y - self.rect.y0) / self.dy - j
        upper = sy > sx
        return 2 * (j * self.nx + i) + upper.astype(int)

    def barycentric(self, tri, x, y):
        """Barycentric coordinates of points with respect to triangles."""
        p = self.vertices[self.triangles[tri]]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x0, y0 = p[..., 0, 0], p[..., 0, 1]
        x1, y1 = p[..., 1, 0], p[..., 1, 1]
        x2, y2 = p[..., 2, 0], p[..., 2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        l1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det
        l2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def build_subdomain_mesh(rect: Rect, nx: int, ny: int, owner: int = 0) -> SubdomainMesh:
    if nx < 1 or ny < 1:
        raise GeometryError("nx and ny must be positive")
    xs = np.linspace(rect.x0, rect.x1, nx + 1)
    ys = np.linspace(rect.y0, rect.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    grid_idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    traces = {"bottom": grid_idx[0, :].copy(), "top": grid_idx[-1, :].copy(),
              "left": grid_idx[:, 0].copy(), "right": grid_idx[:, -1].copy()}
    for arr in (vertices, triangles, *traces.values()):
        arr.setflags(write=False)
    h = float(np.hypot(rect.width / nx, rect.height / ny))
    return SubdomainMesh(owner, rect, nx, ny, vertices, triangles, h, traces)


@dataclass(frozen=True)
class InterfaceSegment:
    """Sub-interval ``[t0, t1]`` of coarse edge ``edge`` on which both
    one-sided traces are single linear polynomials."""

    edge: int
    t0: float
    t1: float
    elem_a: int
    elem_b: int | None

    def length(self, e: CoarseEdge) -> float:
        return (self.t1 - self.t0) * e.length


def _trace_params(e: CoarseEdge, mesh: SubdomainMesh, side: str):
    idx = mesh.traces[side]
    pts = mesh.vertices[idx]
    d = np.array(e.end) - np.array(e.start)
    L = e.length
    rel = pts - np.array(e.start)
    t = rel @ d / (L * L)
    dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / L
    if np.any(dist > REL_TOL * L) or t[0] < -REL_TOL or t[-1] > 1 + REL_TOL:
        raise AlignmentError(f"mesh of subdomain {mesh.owner} is not aligned with edge")
    if abs(t[0]) > REL_TOL or abs(t[-1] - 1) > REL_TOL:
        raise AlignmentError(f"mesh of subdomain {mesh.owner} does not span the edge")
    return idx, t


def _trace_elements(mesh: SubdomainMesh, side: str, idx: np.ndarray):
    """Triangle owning each fine trace segment ``idx[k] -- idx[k+1]``."""
    n = len(idx) - 1
    k = np.arange(n)
    nx, ny = mesh.nx, mesh.ny
    if side == "bottom":
        return 2 * k                       # lower triangle of cell (k, 0)
    if side == "top":
        return 2 * ((ny - 1) * nx + k) + 1  # upper triangle of cell (k, ny-1)
    if side == "left":
        return 2 * (k * nx) + 1            # upper triangle of cell (0, k)
    return 2 * (k * nx + nx - 1)           # lower triangle of cell (nx-1, k)


def merge_interface_breakpoints(e: CoarseEdge, mesh_a: SubdomainMesh,
                                mesh_b: SubdomainMesh | None = None,
                                edge_index: int = -1) -> list[InterfaceSegment]:
    """Split a coarse edge at the union of both sides' fine trace vertices."""
    if mesh_a.owner != e.owners[0]:
        raise AlignmentError("mesh_a does not belong to the edge's first owner")
    idx_a, ta = _trace_params(e, mesh_a, e.sides[0])
    elems_a = _trace_elements(mesh_a, e.sides[0], idx_a)
    params = [ta]
    if mesh_b is not None:
        if len(e.owners) < 2 or mesh_b.owner != e.owners[1]:
            raise AlignmentError("mesh_b does not belong to the edge's second owner")
        idx_b, tb = _trace_params(e, mesh_b, e.sides[1])
        elems_b = _trace_elements(mesh_b, e.sides[1], idx_b)
        params.append(tb)
    t = np.sort(np.concatenate(params))
    t[0], t[-1] = 0.0, 1.0
    keep = np.concatenate([[True], np.diff(t) > REL_TOL])
    t = t[keep]
    if t[-1] != 1.0:
        t[-1] = 1.0

    mids = 0.5 * (t[:-1] + t[1:])
    ka = np.clip(np.searchsorted(ta, mids) - 1, 0, len(ta) - 2)
    if mesh_b is not None:
        kb = np.clip(np.searchsorted(tb, mids) - 1, 0, len(tb) - 2)
    segs = []
    for s in range(len(mids)):
        eb = int(elems_b[kb[s]]) if mesh_b is not None else None
        segs.append(InterfaceSegment(edge_index, float(t[s]), float(t[s + 1]),
                                     int(elems_a[ka[s]]), eb))
    return segs
