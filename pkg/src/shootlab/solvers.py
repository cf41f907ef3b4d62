"""Inner algorithms for the reduced shooting problem min_U E(x_N(U)).

Iterates take the form ``U <- U - alpha * M^{-1} g`` with M the identity
(gradient), a finite-difference Hessian (Newton), or a BFGS inverse-metric
approximation (quasi-Newton). In ``indirect_variational`` mode the update
direction is the dH/du stack itself, ``U <- U - gamma * M^{-1} dH/du``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DivergenceError, SingularMetricError
from .euler import Grid, UniformGrid, as_controls
from .gradients import (
    DEFAULT_FD_STEP,
    ControlBasis,
    GradientReport,
    adjoint_gradient,
    basis_rank_check,
    reduced_cost,
)
from .problems import ScalarOCP

METHODS = ("gradient", "newton", "quasi_newton")
STEP_POLICIES = ("fixed", "compensated", "backtracking")
MODES = ("direct", "indirect_variational")
DIVERGENCE_LIMIT = 1e12
MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class StepPolicy:
    """``fixed`` uses alpha; ``compensated`` uses alpha = 1/h; ``backtracking`` is Armijo."""

    kind: str = "fixed"
    alpha: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.kind not in STEP_POLICIES:
            raise ValueError(f"unknown step policy {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")

    @classmethod
    def fixed(cls, alpha: float) -> "StepPolicy":
        return cls("fixed", alpha)

    @classmethod
    def compensated(cls) -> "StepPolicy":
        return cls("compensated")

    @classmethod
    def backtracking(cls, alpha0: float = 1.0, shrink: float = 0.5, armijo_c: float = 1e-4) -> "StepPolicy":
        return cls("backtracking", alpha0, shrink, armijo_c)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gradient"
    step_policy: StepPolicy = field(default_factory=StepPolicy)
    tolerance_eps: float = 1e-8
    max_iterations: int = 1000
    # None selects 1e-8 * (1 + ||H||_inf) at every Newton iteration.
    hessian_regularization_mu: Optional[float] = None
    mode: str = "direct"
    fd_step: float = DEFAULT_FD_STEP
    keep_iterates: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.tolerance_eps > 0:
            raise ValueError("tolerance_eps must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        mu = self.hessian_regularization_mu
        if mu is not None and not mu >= 0:
            raise ValueError("hessian_regularization_mu must be >= 0")


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    grad_inf_norm: float
    stationarity_inf_norm: float
    step_length: float


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "max_iterations"
    warnings: list[str] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)
    message: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        """Number of updates applied."""
        return max(0, len(self.records) - 1)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


# -- metrics ------------------------------------------------------------------


def newton_hessian(problem: ScalarOCP, grid: Grid, controls, fd_step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central differences of the adjoint gradient map, symmetrized."""
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    u = as_controls(controls, grid.n)
    n = u.size
    H = np.empty((n, n))
    work = u.copy()
    for j in range(n):
        work[j] = u[j] + fd_step
        gp = adjoint_gradient(problem, grid, work).gradient
        work[j] = u[j] - fd_step
        gm = adjoint_gradient(problem, grid, work).gradient
        work[j] = u[j]
        H[:, j] = (gp - gm) / (2 * fd_step)
    return 0.5 * (H + H.T)


def _newton_direction(H: np.ndarray, rhs: np.ndarray, mu: Optional[float]) -> np.ndarray:
    """Solve (H + mu I) d = rhs by Cholesky.

    With mu = 0 a non positive-definite metric is an error. With mu > 0 the
    shift is raised tenfold until the factorization succeeds.
    """
    n = H.shape[0]
    if mu is None:
        mu = 1e-8 * (1.0 + float(np.max(np.sum(np.abs(H), axis=1))))
    eye = np.eye(n)
    shift = mu
    for _ in range(40):
        try:
            L = np.linalg.cholesky(H + shift * eye)
        except np.linalg.LinAlgError:
            if mu == 0:
                raise SingularMetricError(
                    "Newton metric is singular or indefinite; set hessian_regularization_mu > 0"
                ) from None
            shift *= 10.0
            continue
        y = np.linalg.solve(L, rhs)
        return np.linalg.solve(L.T, y)
    raise SingularMetricError("could not regularize the Newton metric")


class _BFGS:
    """Inverse-metric BFGS; resets to identity when s'y is not positive."""

    def __init__(self, n: int):
        self.Hinv = np.eye(n)
        self.resets = 0

    def apply(self, v):
        return self.Hinv @ v

    def update(self, s, y):
        sy = float(s @ y)
        if not sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) or not math.isfinite(sy):
            self.Hinv = np.eye(s.size)
            self.resets += 1
            return
        rho = 1.0 / sy
        V = np.eye(s.size) - rho * np.outer(s, y)
        self.Hinv = V @ self.Hinv @ V.T + rho * np.outer(s, s)


# -- solvers -------------------------------------------------------------------


def _base_step(config: SolverConfig, grid: Grid) -> float:
    policy = config.step_policy
    if policy.kind == "compensated":
        if not isinstance(grid, UniformGrid):
            raise ValueError("the compensated step policy needs a uniform grid")
        # alpha * h = 1; in indirect mode the same update has gamma = alpha * h.
        return 1.0 / grid.h if config.mode == "direct" else 1.0
    return policy.alpha


def _diverged(report: GradientReport, u: np.ndarray) -> bool:
    return not (abs(report.cost) <= DIVERGENCE_LIMIT and float(np.max(np.abs(u))) <= DIVERGENCE_LIMIT)


def _run(problem, grid, x0, config, evaluate, measure):
    """Shared iteration loop.

    ``evaluate(x)`` returns ``(report, g, s)`` where ``g`` is the gradient of
    the objective with respect to the iterate ``x``, ``s`` the matching
    stationarity vector used as the update direction in indirect mode.
    ``measure(g, s)`` is the stopping quantity.
    """
    trace = IterationTrace()
    x = np.array(x0, dtype=float)
    base = _base_step(config, grid)
    policy = config.step_policy
    bfgs = _BFGS(x.size) if config.method == "quasi_newton" else None
    prev = None
    cost_fn = None

    for i in range(config.max_iterations + 1):
        try:
            report, g, s = evaluate(x)
        except DivergenceError as exc:
            trace.status, trace.message = "diverged", str(exc)
            break
        if _diverged(report, x) or not np.all(np.isfinite(g)):
            trace.status, trace.message = "diverged", "cost or controls exceeded the divergence limit"
            trace.records.append(IterationRecord(i, report.cost, report.grad_inf_norm, report.stationarity_inf_norm, 0.0))
            break
        if config.keep_iterates:
            trace.iterates.append(x.copy())
        if bfgs is not None and prev is not None:
            bfgs.update(x - prev[0], g - prev[1])
        rec = IterationRecord(i, report.cost, report.grad_inf_norm, report.stationarity_inf_norm, 0.0)
        trace.records.append(rec)
        if measure(g, s) <= config.tolerance_eps:
            trace.status = "converged"
            break
        if i == config.max_iterations:
            trace.status = "max_iterations"
            break

        v = g if config.mode == "direct" else s
        if config.method == "gradient":
            d = v
        elif config.method == "newton":
            H = evaluate.hessian(x)
            d = _newton_direction(H, v, config.hessian_regularization_mu)
        else:
            d = bfgs.apply(v)

        step = base
        if policy.kind == "backtracking":
            if cost_fn is None:
                cost_fn = evaluate.cost
            slope = float(g @ d)
            if not slope > 0:
                # not a descent direction for the metric at hand; fall back to v
                if bfgs is not None:
                    bfgs.Hinv = np.eye(x.size)
                    bfgs.resets += 1
                d = v
                slope = float(g @ d)
            step = _armijo(cost_fn, x, report.cost, d, slope, base, policy)
            if step == 0.0:
                trace.status, trace.message = "diverged", "line search failed to find a decrease"
                break
        rec.step_length = step
        prev = (x, g)
        x = x - step * d
    if bfgs is not None and bfgs.resets:
        trace.warnings.append(f"quasi-Newton metric reset {bfgs.resets} time(s)")
    return x, trace


def _armijo(cost_fn, x, f0, d, slope, alpha0, policy):
    step = alpha0
    for _ in range(MAX_BACKTRACKS):
        try:
            fn = cost_fn(x - step * d)
        except DivergenceError:
            fn = math.inf
        if fn <= f0 - policy.armijo_c * step * slope:
            return step
        step *= policy.shrink
    return 0.0


def solve_direct(problem: ScalarOCP, grid: Grid, initial_controls, config: SolverConfig):
    """Iterate on the discretized controls; returns ``(final_controls, trace)``.

    Direct mode stops on ||dE^N/dU||_inf <= eps, indirect mode on
    ||dH/du||_inf <= eps.
    """
    u0 = as_controls(initial_controls, grid.n)

    def evaluate(u):
        r = adjoint_gradient(problem, grid, u)
        return r, r.gradient, r.stationarity

    evaluate.cost = lambda u: reduced_cost(problem, grid, u)
    evaluate.hessian = lambda u: newton_hessian(problem, grid, u, config.fd_step)
    measure = _inf if config.mode == "direct" else (lambda g, s: _inf(s))
    return _run(problem, grid, u0, config, evaluate, measure)


def solve_parameterized(
    problem: ScalarOCP, grid: Grid, basis: ControlBasis, initial_coeffs, config: SolverConfig
):
    """Iterate on basis coefficients C with U = B @ C; stops on ||dE^N/dC||_inf <= eps.

    A rank-deficient basis is recorded as a warning on the trace, and on
    convergence the size of the unresolved inner gradient is recorded too.
    """
    if config.mode != "direct":
        raise ValueError("parameterized solves support direct mode only")
    B = basis.matrix(grid)
    rank, full = basis_rank_check(basis, grid)
    c0 = np.asarray(initial_coeffs, dtype=float).reshape(-1)
    if c0.size != basis.size:
        raise ValueError(f"expected {basis.size} coefficients, got {c0.size}")

    def evaluate(c):
        r = adjoint_gradient(problem, grid, B @ c)
        gc = B.T @ r.gradient
        return r, gc, gc

    evaluate.cost = lambda c: reduced_cost(problem, grid, B @ c)

    def hessian(c):
        H = newton_hessian(problem, grid, B @ c, config.fd_step)
        return B.T @ H @ B

    evaluate.hessian = hessian
    coeffs, trace = _run(problem, grid, c0, config, evaluate, _inf)
    if not full:
        trace.warnings.append(
            f"rank-deficient control basis (rank {rank} < {basis.size}): "
            "a zero coefficient gradient does not imply a zero control gradient"
        )
        if trace.converged:
            inner = adjoint_gradient(problem, grid, B @ coeffs)
            trace.warnings.append(f"inner gradient norm at convergence: {inner.grad_inf_norm:.6g}")
    return coeffs, trace


def _inf(g, s=None) -> float:
    return float(np.max(np.abs(g))) if np.size(g) else 0.0


# -- gradient flow ---------------------------------------------------------------


@dataclass
class FlowTrace:
    taus: np.ndarray
    grad_norms: np.ndarray
    final_controls: np.ndarray
    diverged: bool


def integrate_gradient_flow(
    problem: ScalarOCP,
    grid: Grid,
    initial_controls,
    metric: str = "identity",
    tau_end: float = 1.0,
    substep: float = 0.1,
    fd_step: float = DEFAULT_FD_STEP,
) -> FlowTrace:
    """Forward-Euler integration of dU/dtau = -M^{-1} g(U).

    ``metric`` is ``"identity"`` or ``"newton"`` (regularized FD Hessian).
    Divergence (norm above 1e12 or a failed propagation) ends the run and
    is recorded on the trace.
    """
    if not substep > 0:
        raise ValueError("substep must be positive")
    if not tau_end >= 0:
        raise ValueError("tau_end must be non-negative")
    if metric not in ("identity", "newton"):
        raise ValueError(f"unknown metric {metric!r}")
    u = as_controls(initial_controls, grid.n)
    n_steps = int(math.ceil(tau_end / substep - 1e-9)) if tau_end > 0 else 0
    taus, norms = [], []
    diverged = False
    tau = 0.0
    for i in range(n_steps + 1):
        try:
            g = adjoint_gradient(problem, grid, u).gradient
        except DivergenceError:
            diverged = True
            break
        gn = _inf(g)
        taus.append(tau)
        norms.append(gn)
        if not gn <= DIVERGENCE_LIMIT or not float(np.max(np.abs(u))) <= DIVERGENCE_LIMIT:
            diverged = True
            break
        if i == n_steps:
            break
        dt = min(substep, tau_end - tau)
        d = g if metric == "identity" else _newton_direction(newton_hessian(problem, grid, u, fd_step), g, None)
        u = u - dt * d
        tau = tau + dt
    return FlowTrace(np.array(taus), np.array(norms), u, diverged)


def with_step(config: SolverConfig, **changes) -> SolverConfig:
    """Copy of ``config`` with fields replaced (step policy fields may be passed flat)."""
    policy_fields = {k: changes.pop(k) for k in ("kind", "alpha", "shrink", "armijo_c") if k in changes}
    if policy_fields:
        changes["step_policy"] = replace(config.step_policy, **policy_fields)
    return replace(config, **changes)
