"""Reduced-cost gradients for direct shooting.

Two independent routes compute dE^N/dU for E^N(U) = E(x_N(U)):

* :func:`adjoint_gradient` back-propagates costates and scales the
  Hamiltonian gradient stack by the step size.
* :func:`fd_gradient` perturbs one control at a time and re-simulates.

The rest of the module builds on these: control-basis parameterization,
the equivalence verdict between the two routes, the stationarity bound
epsilon/h, and the gradient error introduced by solution-adaptive grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .euler import (
    CostateTrajectory,
    Grid,
    NonuniformGrid,
    Trajectory,
    UniformGrid,
    as_controls,
    backward_adjoint,
    forward_simulate,
    hamiltonian_gradient_stack,
)
from .errors import DegenerateGridError
from .problems import ScalarOCP

DEFAULT_FD_STEP = 1e-6
RANK_RTOL = 1e-10
EQUIVALENCE_TOL = 1e-5
# Relative slack for identities that hold exactly up to one rounding per entry.
ULP_SLACK = 4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class GradientReport:
    gradient: np.ndarray
    costates: CostateTrajectory
    stationarity: np.ndarray
    trajectory: Trajectory
    cost: float

    @property
    def grad_inf_norm(self) -> float:
        return float(np.max(np.abs(self.gradient)))

    @property
    def stationarity_inf_norm(self) -> float:
        return float(np.max(np.abs(self.stationarity)))


def reduced_cost(problem: ScalarOCP, grid: Grid, controls) -> float:
    """E(x_N(U)) by forward simulation."""
    traj = forward_simulate(problem, grid, controls)
    return float(problem.endpoint_cost(traj.terminal_state))


def adjoint_gradient(problem: ScalarOCP, grid: Grid, controls) -> GradientReport:
    """Gradient entries h_k * lambda_k * df/du(x_k, u_k).

    On a uniform grid every h_k is the same float, so ``gradient[k]`` equals
    ``h * stationarity[k]`` bit-for-bit.
    """
    traj = forward_simulate(problem, grid, controls)
    lam = backward_adjoint(problem, grid, traj)
    stat = hamiltonian_gradient_stack(problem, traj, lam)
    if isinstance(grid, UniformGrid):
        grad = grid.h * stat
    else:
        grad = grid.steps * stat
    cost = float(problem.endpoint_cost(traj.terminal_state))
    return GradientReport(grad, lam, stat, traj, cost)


def fd_gradient(
    problem: ScalarOCP, grid: Grid, controls, fd_step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient of U -> E(x_N(U)), one coordinate at a time."""
    return _central_differences(lambda u: reduced_cost(problem, grid, u), as_controls(controls, grid.n), fd_step)


def _central_differences(func: Callable[[np.ndarray], float], u: np.ndarray, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("fd_step must be positive")
    grad = np.empty(u.size)
    work = u.copy()
    for j in range(u.size):
        work[j] = u[j] + step
        fp = func(work)
        work[j] = u[j] - step
        fm = func(work)
        work[j] = u[j]
        grad[j] = (fp - fm) / (2 * step)
    return grad


# -- control parameterization ------------------------------------------------


@dataclass(frozen=True)
class ControlBasis:
    """Basis functions xi_j(t); controls are U = B @ C with B[k, j] = xi_j(t_k)."""

    size: int
    sample: Callable[[int, float], float]
    name: str = "custom"

    def matrix(self, grid: Grid) -> np.ndarray:
        nodes = np.asarray(grid.nodes)[:-1]
        return np.array([[float(self.sample(j, t)) for j in range(self.size)] for t in nodes]).reshape(
            nodes.size, self.size
        )

    @classmethod
    def constant(cls) -> "ControlBasis":
        return cls(1, lambda j, t: 1.0, "constant")

    @classmethod
    def monomials(cls, degree: int) -> "ControlBasis":
        return cls(degree + 1, lambda j, t: t**j, f"monomial{degree}")

    @classmethod
    def indicators(cls, grid: Grid) -> "ControlBasis":
        """One indicator per grid interval; sampling on ``grid`` gives the identity."""
        nodes = np.asarray(grid.nodes)

        def sample(j, t):
            k = int(np.searchsorted(nodes, t, side="right")) - 1
            return 1.0 if k == j else 0.0

        return cls(grid.n, sample, "indicator")

    @classmethod
    def duplicated(cls, base: Optional["ControlBasis"] = None) -> "ControlBasis":
        """Two copies of the same function (rank-deficient on any grid)."""
        base = base or cls.constant()
        return cls(2, lambda j, t: base.sample(0, t), "duplicated")

    @classmethod
    def zero(cls, size: int = 1) -> "ControlBasis":
        return cls(size, lambda j, t: 0.0, "zero")


def parameterized_gradient(problem: ScalarOCP, grid: Grid, basis: ControlBasis, coeffs):
    """Return ``(B.T @ dE/dU, inner_report)`` at U = B @ coeffs."""
    c = np.asarray(coeffs, dtype=float).reshape(-1)
    if c.size != basis.size:
        raise ValueError(f"expected {basis.size} coefficients, got {c.size}")
    B = basis.matrix(grid)
    inner = adjoint_gradient(problem, grid, B @ c)
    return B.T @ inner.gradient, inner


def basis_rank_check(basis: ControlBasis, grid: Grid) -> tuple[int, bool]:
    """Numerical rank of the sampled basis matrix and whether it is full."""
    if basis.size > grid.n:
        raise ValueError(f"over-parameterized basis: m={basis.size} > N={grid.n}")
    s = np.linalg.svd(basis.matrix(grid), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, False
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return rank, rank == basis.size


# -- verification --------------------------------------------------------------


@dataclass
class EquivalenceVerdict:
    fd_deviation: float  # ||fd - h*stationarity|| / max(1, ||h*stationarity||)
    identity_deviation: float  # max_k |g_k - h*s_k| / |g_k|, adjoint route
    tolerance: float
    passed: bool
    fd_gradient: np.ndarray
    scaled_stationarity: np.ndarray


def verify_equivalence(
    problem: ScalarOCP,
    grid: UniformGrid,
    controls,
    fd_step: float = DEFAULT_FD_STEP,
    tolerance: float = EQUIVALENCE_TOL,
    costates: Optional[CostateTrajectory] = None,
) -> EquivalenceVerdict:
    """Check the finite-difference gradient against h times the dH/du stack.

    ``costates`` overrides the back-propagated costates used to build the
    stack (for known-bad fixtures); the adjoint-route identity is always
    checked with the genuine costates.
    """
    report = adjoint_gradient(problem, grid, controls)
    h = grid.h
    ident = _max_rel(report.gradient, h * report.stationarity)
    if costates is not None:
        stat = hamiltonian_gradient_stack(problem, report.trajectory, costates)
    else:
        stat = report.stationarity
    scaled = h * stat
    fd = fd_gradient(problem, grid, controls, fd_step)
    dev = float(np.max(np.abs(fd - scaled))) / max(1.0, float(np.max(np.abs(scaled))))
    passed = dev <= tolerance and ident <= ULP_SLACK
    return EquivalenceVerdict(dev, ident, tolerance, passed, fd, scaled)


def _max_rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(diff == 0, 0.0, diff / scale)
    return float(np.max(rel)) if rel.size else 0.0


@dataclass
class StationarityBound:
    epsilon: float
    bound: float
    max_stationarity: float
    satisfied: bool


def stationarity_bound(report: GradientReport, grid: UniformGrid) -> StationarityBound:
    """Bound epsilon/h on max|dH/du| implied by a gradient of size epsilon.

    ``satisfied`` allows a few ulps: max|s| and ||h*s||/h agree only up to
    rounding.
    """
    h = grid.h
    if not h > 0:
        raise ValueError("step size must be positive")
    eps = report.grad_inf_norm
    bound = eps / h
    smax = report.stationarity_inf_norm
    return StationarityBound(eps, bound, smax, smax <= bound * (1 + ULP_SLACK))


# -- adaptive grids ------------------------------------------------------------

Adaptation = Callable[[ScalarOCP, np.ndarray], Grid]


def identity_adaptation(problem: ScalarOCP, controls: np.ndarray) -> UniformGrid:
    return UniformGrid(problem.t0, problem.tf, controls.size)


def arclength_adaptation(problem: ScalarOCP, controls: np.ndarray) -> NonuniformGrid:
    """Steps proportional to 1/(1 + |f(x_k, u_k)|) along the uniform-grid solution."""
    n = controls.size
    uniform = UniformGrid(problem.t0, problem.tf, n)
    traj = forward_simulate(problem, uniform, controls)
    xs = traj.full_states[:-1]
    speed = np.array([abs(problem.dynamics(float(x), float(u))) for x, u in zip(xs, controls)])
    weights = 1.0 / (1.0 + speed)
    steps = weights * (problem.horizon / weights.sum())
    grid = NonuniformGrid.from_steps(problem.t0, steps)
    # pin the right end exactly to tf
    nodes = np.array(grid.nodes)
    nodes[-1] = problem.tf
    return NonuniformGrid(nodes)


ADAPTATIONS: dict[str, Adaptation] = {
    "identity": identity_adaptation,
    "arclength": arclength_adaptation,
}


@dataclass
class AdaptiveDecomposition:
    naive: np.ndarray
    true_fd: np.ndarray
    noise_norm: float
    grid: Grid


def adaptive_gradient_decomposition(
    problem: ScalarOCP,
    adaptation: str | Adaptation,
    controls,
    fd_step: float = DEFAULT_FD_STEP,
) -> AdaptiveDecomposition:
    """Split the adaptive-grid gradient into its frozen-grid part and the rest.

    ``naive`` is the adjoint gradient with the grid frozen at the current
    controls; ``true_fd`` differentiates U -> E(x_N(U, grid(U))) re-adapting
    the grid at every perturbation. Their difference measures the term a
    frozen-grid method ignores.
    """
    rule = ADAPTATIONS[adaptation] if isinstance(adaptation, str) else adaptation
    u = as_controls(controls, np.asarray(controls).size)

    def adapted(v):
        g = rule(problem, v)
        if not np.all(np.asarray(g.steps) > 0):
            raise DegenerateGridError("adaptation produced a non-increasing grid")
        return g

    grid = adapted(u)
    naive = adjoint_gradient(problem, grid, u).gradient
    true_fd = _central_differences(lambda v: reduced_cost(problem, adapted(v), v), u, fd_step)
    noise = float(np.max(np.abs(true_fd - naive)))
    if not math.isfinite(noise):
        raise ArithmeticError("non-finite adaptive gradient")
    return AdaptiveDecomposition(naive, true_fd, noise, grid)
