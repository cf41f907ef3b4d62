"""Forward-Euler state propagation and backward-Euler costate propagation.

Controls and costates are interval-associated: a grid with N intervals
carries u_0..u_{N-1} and lambda_0..lambda_{N-1}; there is no u_N or
lambda_N. States are x_1..x_N with x_0 held separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import AdjointDiverged, DegenerateGridError, PropagationDiverged
from .problems import ScalarOCP

STATE_LIMIT = 1e12


@dataclass(frozen=True)
class UniformGrid:
    t0: float
    tf: float
    n_intervals: int

    def __post_init__(self):
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 1:
            raise ValueError(f"n_intervals must be a positive integer, got {self.n_intervals}")
        if not self.tf > self.t0:
            raise ValueError(f"need t0 < tf, got [{self.t0}, {self.tf}]")

    @classmethod
    def for_problem(cls, problem: ScalarOCP, n_intervals: int) -> "UniformGrid":
        return cls(problem.t0, problem.tf, n_intervals)

    @property
    def n(self) -> int:
        return self.n_intervals

    @property
    def h(self) -> float:
        return (self.tf - self.t0) / self.n_intervals

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_intervals + 1)

    @property
    def steps(self) -> np.ndarray:
        return np.full(self.n_intervals, self.h)

    @property
    def is_uniform(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class NonuniformGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise DegenerateGridError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)) or not np.all(np.diff(nodes) > 0):
            raise DegenerateGridError("grid nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_steps(cls, t0: float, steps: Sequence[float]) -> "NonuniformGrid":
        steps = np.asarray(steps, dtype=float)
        if np.any(~(steps > 0)):
            raise DegenerateGridError("all steps must be positive")
        return cls(np.concatenate([[t0], t0 + np.cumsum(steps)]))

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def tf(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def is_uniform(self) -> bool:
        return False


Grid = Union[UniformGrid, NonuniformGrid]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discrete primal pair: x0, states (x_1..x_N), controls (u_0..u_{N-1})."""

    x0: float
    states: np.ndarray
    controls: np.ndarray

    @property
    def n(self) -> int:
        return self.controls.size

    @property
    def terminal_state(self) -> float:
        return float(self.states[-1])

    @property
    def full_states(self) -> np.ndarray:
        """States including x0, i.e. x_0..x_N."""
        return np.concatenate([[self.x0], self.states])


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    costates: np.ndarray

    @property
    def n(self) -> int:
        return self.costates.size


@dataclass
class IndirectResiduals:
    state: np.ndarray
    adjoint: np.ndarray
    transversality: float
    stationarity: np.ndarray

    @property
    def state_norm(self) -> float:
        return _inf_norm(self.state)

    @property
    def adjoint_norm(self) -> float:
        return max(_inf_norm(self.adjoint), abs(self.transversality))

    @property
    def stationarity_norm(self) -> float:
        return _inf_norm(self.stationarity)

    def norms(self) -> tuple[float, float, float]:
        return self.state_norm, self.adjoint_norm, self.stationarity_norm


def _inf_norm(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


# The residual evaluation below reuses these two helpers so that a
# forward/backward pair reproduces itself bit-for-bit.
def _euler_step(x, h, fval):
    return x + h * fval


def _adjoint_step(lam_next, h_next, fx_next):
    return lam_next + h_next * lam_next * fx_next


def as_controls(controls, n: int) -> np.ndarray:
    u = np.array(controls, dtype=float).reshape(-1)
    if u.size != n:
        raise ValueError(f"expected {n} controls, got {u.size}")
    if not np.all(np.isfinite(u)):
        raise ValueError("controls must be finite")
    return u


def forward_simulate(problem: ScalarOCP, grid: Grid, controls) -> Trajectory:
    """Propagate x_{k+1} = x_k + h_k f(x_k, u_k) from x_0 = problem.x0."""
    u = as_controls(controls, grid.n)
    steps = grid.steps.tolist()
    f = problem.dynamics
    x = float(problem.x0)
    states = np.empty(grid.n)
    for k, (h, uk) in enumerate(zip(steps, u.tolist())):
        x = _euler_step(x, h, f(x, uk))
        if not abs(x) <= STATE_LIMIT:
            raise PropagationDiverged(f"state diverged at x_{k + 1} = {x!r}", index=k + 1)
        states[k] = x
    u.setflags(write=False)
    states.setflags(write=False)
    return Trajectory(float(problem.x0), states, u)


def backward_adjoint(problem: ScalarOCP, grid: Grid, traj: Trajectory) -> CostateTrajectory:
    """Back-propagate costates from lambda_{N-1} = dE/dx(x_N).

    lambda_k = lambda_{k+1} + h_{k+1} lambda_{k+1} df/dx(x_{k+1}, u_{k+1}).
    """
    n = grid.n
    if traj.n != n or traj.states.size != n:
        raise ValueError("trajectory does not match grid")
    steps = grid.steps
    xs, us = traj.states, traj.controls
    fx = problem.dynamics_dx
    lam = np.empty(n)
    cur = float(problem.endpoint_cost_dx(float(xs[-1])))
    if not math.isfinite(cur):
        raise AdjointDiverged("non-finite transversality value", index=n - 1)
    lam[n - 1] = cur
    for k in range(n - 2, -1, -1):
        # x_{k+1} is states[k]
        cur = _adjoint_step(cur, float(steps[k + 1]), fx(float(xs[k]), float(us[k + 1])))
        if not math.isfinite(cur):
            raise AdjointDiverged(f"costate diverged at lambda_{k}", index=k)
        lam[k] = cur
    lam.setflags(write=False)
    return CostateTrajectory(lam)


def hamiltonian_gradient_stack(
    problem: ScalarOCP, traj: Trajectory, costates: CostateTrajectory
) -> np.ndarray:
    """Entries lambda_k * df/du(x_k, u_k) for k = 0..N-1."""
    if costates.n != traj.n:
        raise ValueError("costates and trajectory lengths differ")
    fu = problem.dynamics_du
    xs = traj.full_states[:-1].tolist()
    out = np.array(
        [lam * fu(x, u) for lam, x, u in zip(costates.costates.tolist(), xs, traj.controls.tolist())],
        dtype=float,
    )
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("non-finite Hamiltonian gradient")
    return out


def indirect_residuals(
    problem: ScalarOCP, grid: UniformGrid, traj: Trajectory, costates: CostateTrajectory
) -> IndirectResiduals:
    """Residuals of the discrete state/adjoint/transversality/stationarity system."""
    if not isinstance(grid, UniformGrid):
        raise TypeError("indirect_residuals is defined on a uniform grid only")
    n = grid.n
    if traj.n != n or traj.states.size != n or costates.n != n:
        raise ValueError("trajectory/costates do not match grid")
    h = grid.h
    f, fx = problem.dynamics, problem.dynamics_dx
    xs = traj.full_states.tolist()
    us = traj.controls.tolist()
    lam = costates.costates.tolist()
    state = np.array([xs[k + 1] - _euler_step(xs[k], h, f(xs[k], us[k])) for k in range(n)])
    adjoint = np.array(
        [lam[k] - _adjoint_step(lam[k + 1], h, fx(xs[k + 1], us[k + 1])) for k in range(n - 1)]
    )
    transversality = lam[n - 1] - problem.endpoint_cost_dx(xs[n])
    stationarity = hamiltonian_gradient_stack(problem, traj, costates)
    return IndirectResiduals(state, adjoint, float(transversality), stationarity)
