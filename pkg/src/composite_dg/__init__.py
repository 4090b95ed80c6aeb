"""Composite discontinuous Galerkin solver for the equilibrium potential
equation of layered semiconductor devices."""

__version__ = "0.1.0"

from .analysis import (MMS_CASES, ConvergenceRow, ReferenceProfile1D, compute_error,
                       convergence_study, mms_problem, observed_order, pn_analog,
                       qw_analog, solve_reference_1d, transverse_variation)
from .exceptions import *  # noqa: F401,F403
from .forms import (CSIPG, CWOPSIP, MethodSpec, assemble_A, assemble_B, assemble_D,
                    assemble_J, assemble_load, assemble_mass, assemble_rhs, broken_norm,
                    broken_norm_sq, penalties, penalty)
from .geometry import (NEUMANN, BoundaryPiece, CoarseEdge, CoarseGrid, Dirichlet, Rect,
                       SubdomainMesh, build_coarse_grid, build_subdomain_mesh,
                       classify_edges, merge_interface_breakpoints)
from .problem import Layer, LayeredLayout, ProblemSpec
from .quadrature import segment_rule, triangle_rule
from .solver import (DiscreteSystem, SolveReport, SolveSettings, initial_guess,
                     linear_solve, newton_solve, residual, solve)
from .space import (CompositeSpace, PiecewiseField, ScalarField, evaluate,
                    evaluate_gradient, interpolate, trace_pair)
