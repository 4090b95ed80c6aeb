"""Problem data for the equilibrium potential equation

    -div(eps grad u) + exp(u - v) - exp(w - u) = k1   in Omega,
    u = u_D on Sigma_D,   eps grad u . n = 0 on Sigma_N,

and layered device layouts that produce grids and spaces at a given K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import (CoarseEdge, CoarseGrid, Dirichlet, Rect,
                       build_coarse_grid, classify_edges)
from .space import CompositeSpace, PiecewiseField, ScalarField, as_field

__all__ = ["ProblemSpec", "Layer", "LayeredLayout"]


@dataclass
class ProblemSpec:
    """Coefficients and data of one problem.

    ``boundary`` is either a single field used on every Dirichlet edge or a
    mapping from Dirichlet label to field. With ``linear=True`` the carrier
    term is dropped and the problem is the linear Poisson equation.
    """

    eps: object = 1.0
    k1: object = 0.0
    boundary: object = 0.0
    v_offset: object = 0.0
    w_offset: object = 0.0
    linear: bool = False

    def __post_init__(self):
        self.eps = as_field(self.eps)
        self.k1 = as_field(self.k1)
        self.v_offset = as_field(self.v_offset)
        self.w_offset = as_field(self.w_offset)
        if isinstance(self.boundary, Mapping):
            self.boundary = {k: as_field(v) for k, v in self.boundary.items()}
        else:
            self.boundary = as_field(self.boundary)

    def boundary_field(self, edge: CoarseEdge):
        if isinstance(self.boundary, dict):
            try:
                return self.boundary[edge.label]
            except KeyError:
                raise KeyError(f"no Dirichlet value for label {edge.label!r}") from None
        return self.boundary

    def eps_max(self, space: CompositeSpace) -> float:
        """Largest value of eps, sampled at the mesh vertices."""
        m = 0.0
        for i, mesh in enumerate(space.meshes):
            v = self.eps.value(i, mesh.vertices[:, 0], mesh.vertices[:, 1])
            m = max(m, float(np.max(v)))
        return m


@dataclass(frozen=True)
class Layer:
    """One layer ``y0 <= y <= y1`` of a stacked device.

    At refinement level ``K`` the layer gets ``transverse * K`` cells along
    x and ``longitudinal * K`` cells along y.
    """

    y0: float
    y1: float
    transverse: int = 1
    longitudinal: int = 1


@dataclass(frozen=True)
class LayeredLayout:
    """Rectangle ``[x0, x1] x [y0, y1]`` stacked into layers along y.

    ``boundary`` maps side names to conditions as in
    :func:`geometry.classify_edges`.
    """

    x0: float
    x1: float
    layers: tuple[Layer, ...]
    boundary: Mapping = field(default_factory=lambda: {"bottom": Dirichlet("bottom"),
                                                       "top": Dirichlet("top")})

    @property
    def domain(self) -> Rect:
        return Rect(self.x0, self.x1, self.layers[0].y0, self.layers[-1].y1)

    @property
    def y_cuts(self) -> list[float]:
        return [l.y1 for l in self.layers[:-1]]

    def grid(self) -> CoarseGrid:
        g = build_coarse_grid(self.domain, (), self.y_cuts)
        return classify_edges(g, self.boundary)

    def divisions(self, K: int) -> list[tuple[int, int]]:
        return [(l.transverse * K, l.longitudinal * K) for l in self.layers]

    def space(self, K: int) -> CompositeSpace:
        return CompositeSpace.build(self.grid(), self.divisions(K))

    def layer_field(self, values: Sequence) -> PiecewiseField:
        if len(values) != len(self.layers):
            raise ValueError("one value per layer required")
        return PiecewiseField(values)
