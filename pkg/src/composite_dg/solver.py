"""Damped Newton iteration for the discrete equilibrium problem."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (LinearSolveFailure, MissingDirichletError,
                         NoConvergence, OverflowGuard)
from .forms import (MethodSpec, assemble_A, assemble_B, assemble_D,
                    assemble_J, assemble_rhs)
from .problem import ProblemSpec
from .space import CompositeSpace

__all__ = ["SolveSettings", "SolveReport", "DiscreteSystem", "residual",
           "newton_solve", "linear_solve", "initial_guess", "solve"]

log = logging.getLogger(__name__)

DIRECT = "direct"
CG = "cg"
DIRECT_LIMIT = 200_000


@dataclass(frozen=True)
class SolveSettings:
    newton_tol: float = 1e-10
    newton_atol: float = 1e-13
    max_newton: int = 50
    min_damping: float = 2.0**-20
    linear_solver: str | None = None  # None: direct below DIRECT_LIMIT dofs, else CG
    cg_tol: float = 1e-12
    cg_maxiter: int | None = None

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.newton_atol >= 0 and self.cg_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.linear_solver not in (None, DIRECT, CG):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    converged: bool = False
    seconds: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else float("nan")

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "converged": self.converged,
                "final_residual": self.final_residual,
                "residual_norms": list(map(float, self.residual_norms)),
                "damping": list(map(float, self.damping)),
                "linear_iterations": list(self.linear_iterations),
                "seconds": self.seconds}


class DiscreteSystem:
    """Linear part ``K`` and load ``f`` of ``P(u) = K u + b(u) - f``.

    ``K`` is ``A + J_2`` (CWOPSIP) or ``A + D + D^T + J_1`` (CSIPG).
    """

    def __init__(self, space: CompositeSpace, method: MethodSpec, problem: ProblemSpec):
        self.space = space
        self.method = method
        self.problem = problem
        self.eps_max = problem.eps_max(space)
        A = assemble_A(space, problem.eps)
        J = assemble_J(space, method, self.eps_max)
        K = A + J
        if method.include_flux:
            D = assemble_D(space, problem.eps, method)
            K = K + D + D.T
        self.K = K.tocsr()
        self.rhs = assemble_rhs(space, method, problem, self.eps_max)

    @property
    def n(self) -> int:
        return self.space.total_dofs

    def carrier(self, u, derivative=True):
        return assemble_B(self.space, u, self.problem.v_offset, self.problem.w_offset,
                          derivative=derivative)

    def residual(self, u: np.ndarray) -> np.ndarray:
        r = self.K @ u - self.rhs
        if not self.problem.linear:
            r = r + self.carrier(u, derivative=False)
        return r

    def residual_and_jacobian(self, u: np.ndarray):
        if self.problem.linear:
            return self.K @ u - self.rhs, self.K
        b, dB = self.carrier(u)
        return self.K @ u - self.rhs + b, (self.K + dB).tocsr()


def residual(space, method, problem, coeffs) -> np.ndarray:
    """Vector of ``P(u_h) phi_k`` for every basis function."""
    return DiscreteSystem(space, method, problem).residual(coeffs)


def linear_solve(M, rhs: np.ndarray, settings: SolveSettings | None = None):
    """Solve a symmetric system; returns ``(x, iterations)``."""
    settings = settings or SolveSettings()
    M = sp.csr_matrix(M)
    n = M.shape[0]
    kind = settings.linear_solver or (DIRECT if n < DIRECT_LIMIT else CG)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros(n), 0
    if kind == DIRECT:
        try:
            x = spla.splu(M.tocsc(), permc_spec="COLAMD").solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"factorization failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("factorization produced non-finite values")
        return x, 1
    d = M.diagonal()
    if np.any(d <= 0):
        raise LinearSolveFailure("matrix has a nonpositive diagonal; not SPD")
    precond = sp.diags(1.0 / d)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(M, rhs, rtol=settings.cg_tol, atol=0.0,
                      maxiter=settings.cg_maxiter or 10 * n, M=precond, callback=cb)
    if info != 0:
        raise LinearSolveFailure(f"CG did not converge (info={info})")
    return x, count[0]


def initial_guess(space: CompositeSpace, problem: ProblemSpec) -> np.ndarray:
    """Local charge neutrality: ``asinh(k1 / 2) + (v + w) / 2`` at each node."""
    out = np.empty(space.total_dofs)
    for i, m in enumerate(space.meshes):
        x, y = m.vertices[:, 0], m.vertices[:, 1]
        k = problem.k1.value(i, x, y)
        v = problem.v_offset.value(i, x, y)
        w = problem.w_offset.value(i, x, y)
        out[space.dof_slice(i)] = np.arcsinh(0.5 * k * np.exp(0.5 * (v - w))) + 0.5 * (v + w)
    return out


def newton_solve(space, method, problem, initial=None, settings=None, system=None):
    """Damped Newton iteration; returns ``(coeffs, report)``.

    Steps are halved until the residual norm does not increase; a step
    whose carrier term would overflow is halved as well.
    """
    settings = settings or SolveSettings()
    if not space.grid.dirichlet_edges:
        raise MissingDirichletError("problem has no Dirichlet edge")
    system = system or DiscreteSystem(space, method, problem)
    u = initial_guess(space, problem) if initial is None else np.array(initial, dtype=float)
    report = SolveReport()
    t0 = time.perf_counter()

    r, J = system.residual_and_jacobian(u)
    rnorm = np.linalg.norm(r)
    r0 = rnorm
    report.residual_norms.append(rnorm)
    target = max(settings.newton_tol * r0, settings.newton_atol)
    while rnorm > target:
        if report.iterations >= settings.max_newton:
            report.seconds = time.perf_counter() - t0
            raise NoConvergence(f"no convergence after {settings.max_newton} Newton steps "
                                f"(residual {rnorm:.3e})", report)
        du, lin_it = linear_solve(J, -r, settings)
        report.linear_iterations.append(lin_it)
        lam = 1.0
        while True:
            trial = u + lam * du
            try:
                r_trial = system.residual(trial)
                rn_trial = np.linalg.norm(r_trial)
            except OverflowGuard:
                rn_trial = np.inf
            if rn_trial <= rnorm or (system.problem.linear and np.isfinite(rn_trial)):
                break
            lam *= 0.5
            if lam < settings.min_damping:
                report.seconds = time.perf_counter() - t0
                raise NoConvergence("damping factor fell below its minimum", report)
        u = trial
        report.iterations += 1
        report.damping.append(lam)
        r, J = system.residual_and_jacobian(u)
        rnorm = np.linalg.norm(r)
        report.residual_norms.append(rnorm)
        log.debug("newton %d: |r| = %.3e, damping %.3g", report.iterations, rnorm, lam)
    report.converged = True
    report.seconds = time.perf_counter() - t0
    return u, report


def solve(space, method, problem, settings=None, initial=None):
    """Convenience wrapper: build the system and run Newton from the default guess."""
    return newton_solve(space, method, problem, initial, settings)
