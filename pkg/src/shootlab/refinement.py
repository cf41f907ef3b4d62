"""Grid-refinement schedule around the inner solver.

Each level fixes (N_i, eps_i, max_iterations_i), warm-starts from the
previous level's controls and runs :func:`shootlab.solvers.solve_direct`.
Locking eps_i / h_i keeps the dH/du residual bounded as the grid refines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, ScheduleError
from .euler import (
    CostateTrajectory,
    Grid,
    Trajectory,
    UniformGrid,
    indirect_residuals,
)
from .gradients import adjoint_gradient
from .problems import ScalarOCP
from .solvers import SolverConfig, solve_direct

RATIO_SLACK = 1e-12


@dataclass(frozen=True)
class Level:
    n_intervals: int
    eps: float
    max_iterations: int

    def __post_init__(self):
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 1:
            raise ScheduleError(f"invalid n_intervals {self.n_intervals}")
        if not self.eps > 0:
            raise ScheduleError("eps must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ScheduleError("max_iterations must be a positive integer")


@dataclass(frozen=True)
class RefinementSchedule:
    levels: tuple[Level, ...]
    target_ratio: float

    def __post_init__(self):
        levels = tuple(l if isinstance(l, Level) else Level(*l) for l in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ScheduleError("schedule needs at least one level")
        if not self.target_ratio > 0:
            raise ScheduleError("target_ratio must be positive")
        ns = [l.n_intervals for l in levels]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ScheduleError(f"n_intervals must be strictly increasing, got {ns}")

    @classmethod
    def doubling(
        cls, n0: int, n_levels: int, ratio: float, max_iterations: int = 10_000, horizon: float = 1.0
    ) -> "RefinementSchedule":
        """N doubles per level with eps_i = ratio * h_i."""
        levels = []
        for i in range(n_levels):
            n = n0 * 2**i
            levels.append(Level(n, ratio * horizon / n, max_iterations))
        return cls(tuple(levels), ratio)

    def ratios(self, horizon: float) -> list[float]:
        return [l.eps / (horizon / l.n_intervals) for l in self.levels]

    def ratio_violations(self, horizon: float) -> list[str]:
        """Ways in which eps/h is not locked down as the grid refines."""
        r = self.ratios(horizon)
        out = []
        for i, (a, b) in enumerate(zip(r, r[1:]), start=1):
            if b > a * (1 + RATIO_SLACK):
                out.append(f"eps/h grows at level {i}: {a:.6g} -> {b:.6g}")
        if r[-1] > self.target_ratio * (1 + RATIO_SLACK):
            out.append(f"final eps/h = {r[-1]:.6g} exceeds target {self.target_ratio:.6g}")
        return out


@dataclass
class LevelReport:
    level: int
    n_intervals: int
    h: float
    eps: float
    status: str
    iterations: int
    cost: float
    grad_norm: float
    stationarity_norm: float
    residual_norms: tuple[float, float, float]

    @property
    def eps_over_h(self) -> float:
        return self.eps / self.h


@dataclass
class RefinementResult:
    trajectory: Trajectory
    costates: CostateTrajectory
    reports: list[LevelReport] = field(default_factory=list)
    grids: list[UniformGrid] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)


def prolong_controls(coarse_controls, coarse_grid: Grid, fine_grid: Grid) -> np.ndarray:
    """Piecewise-constant transfer: each fine node takes the coarse control of its interval."""
    u = np.asarray(coarse_controls, dtype=float).reshape(-1)
    if u.size != coarse_grid.n:
        raise ValueError("coarse controls do not match coarse grid")
    if coarse_grid.t0 != fine_grid.t0 or coarse_grid.tf != fine_grid.tf:
        raise ValueError("grids cover different horizons")
    nc, nf = coarse_grid.n, fine_grid.n
    if isinstance(coarse_grid, UniformGrid) and isinstance(fine_grid, UniformGrid):
        idx = (np.arange(nf) * nc) // nf
    else:
        cnodes = np.asarray(coarse_grid.nodes)
        idx = np.searchsorted(cnodes, np.asarray(fine_grid.nodes)[:-1], side="right") - 1
        idx = np.clip(idx, 0, nc - 1)
    return u[idx]


def solve_with_refinement(
    problem: ScalarOCP,
    schedule: RefinementSchedule,
    base_config: SolverConfig,
    initial_controls_coarse,
    enforce_ratio: bool = True,
) -> RefinementResult:
    """Run the schedule level by level with warm starts.

    Intermediate levels may stop at their iteration cap. A diverged level
    ends the run; the partial reports are attached to the raised error as
    ``exc.partial``. Set ``enforce_ratio=False`` to run schedules whose
    eps/h drifts upward (useful to demonstrate that failure mode).
    """
    if enforce_ratio:
        bad = schedule.ratio_violations(problem.horizon)
        if bad:
            raise ScheduleError("; ".join(bad))
    first = schedule.levels[0]
    grid = UniformGrid(problem.t0, problem.tf, first.n_intervals)
    u = np.asarray(initial_controls_coarse, dtype=float).reshape(-1)
    if u.size != grid.n:
        raise ValueError(f"initial controls must have length {grid.n}")
    result = None
    reports, grids, trajs = [], [], []
    prev_grid = None
    for i, level in enumerate(schedule.levels):
        grid = UniformGrid(problem.t0, problem.tf, level.n_intervals)
        if prev_grid is not None:
            u = prolong_controls(u, prev_grid, grid)
        cfg = replace(base_config, tolerance_eps=level.eps, max_iterations=level.max_iterations)
        u, trace = solve_direct(problem, grid, u, cfg)
        if trace.status == "diverged":
            exc = DivergenceError(f"level {i} (N={level.n_intervals}) diverged: {trace.message}")
            exc.partial = reports
            raise exc
        rep = adjoint_gradient(problem, grid, u)
        res = indirect_residuals(problem, grid, rep.trajectory, rep.costates)
        reports.append(
            LevelReport(
                level=i,
                n_intervals=level.n_intervals,
                h=grid.h,
                eps=level.eps,
                status=trace.status,
                iterations=trace.iterations,
                cost=rep.cost,
                grad_norm=rep.grad_inf_norm,
                stationarity_norm=rep.stationarity_inf_norm,
                residual_norms=res.norms(),
            )
        )
        grids.append(grid)
        trajs.append(rep.trajectory)
        result = rep
        prev_grid = grid
    return RefinementResult(result.trajectory, result.costates, reports, grids, trajs)


@dataclass
class ConvergenceProbe:
    control_diff_norm: float
    state_diff_norm: float
    terminal_state_diff: float


def discretization_convergence_probe(
    coarse: Trajectory, coarse_grid: UniformGrid, fine: Trajectory, fine_grid: UniformGrid
) -> ConvergenceProbe:
    """Compare two solutions at the coarse nodes, which the fine grid also contains."""
    nc, nf = coarse_grid.n, fine_grid.n
    if nf % nc:
        raise ValueError("fine grid must nest the coarse grid")
    stride = nf // nc
    if coarse.n != nc or fine.n != nf:
        raise ValueError("trajectories do not match grids")
    du = coarse.controls - fine.controls[::stride]
    dx = coarse.full_states - fine.full_states[::stride]
    return ConvergenceProbe(
        float(np.max(np.abs(du))),
        float(np.max(np.abs(dx))),
        float(abs(coarse.terminal_state - fine.terminal_state)),
    )

