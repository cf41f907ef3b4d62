"""Hamiltonianization of autonomous ODEs.

Any ODE x' = f(x) is paired with a shadow ODE -psi' = (df/dx)^T psi. The
scalar H(psi, x) = psi . f(x) is then conserved along the joint flow, since
dH/dt = psi'.f + psi.(df/dx) f = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class AutonomousODE:
    dimension: int
    vector_field: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    @classmethod
    def linear(cls, A, name: str = "linear") -> "AutonomousODE":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A.shape[0], lambda x: A @ x, lambda x: A, name)


@dataclass(frozen=True)
class HamiltonianSystem:
    base: AutonomousODE

    def hamiltonian(self, psi, x) -> float:
        return float(np.dot(psi, self.base.vector_field(np.asarray(x, dtype=float))))

    def dpsi_hamiltonian(self, psi, x) -> np.ndarray:
        """Gradient in psi, which is f(x) (H is linear in psi)."""
        return np.asarray(self.base.vector_field(np.asarray(x, dtype=float)), dtype=float)

    def shadow_field(self, x, psi) -> np.ndarray:
        """psi' = -(df/dx)^T psi."""
        J = np.atleast_2d(self.base.jacobian(np.asarray(x, dtype=float)))
        return -(J.T @ np.asarray(psi, dtype=float))

    def joint_field(self, x, psi) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.base.vector_field(x), dtype=float), self.shadow_field(x, psi)


def hamiltonianize(ode: AutonomousODE) -> HamiltonianSystem:
    return HamiltonianSystem(ode)


@dataclass
class JointTrajectory:
    times: np.ndarray
    states: np.ndarray  # (samples, dim)
    costates: np.ndarray  # (samples, dim)
    hamiltonian: np.ndarray


def integrate_joint(
    system: HamiltonianSystem,
    x_init,
    psi_init,
    t_end: float,
    step: float,
    method: str = "rk4",
) -> JointTrajectory:
    """Fixed-step integration of (x, psi) over [0, t_end], sampling H at every step.

    ``method`` is ``"rk4"`` (classical fourth order) or ``"euler"``. The last
    step is shortened if ``t_end`` is not a multiple of ``step``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if not t_end >= 0:
        raise ValueError("t_end must be non-negative")
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown method {method!r}")
    dim = system.base.dimension
    x = np.asarray(x_init, dtype=float).reshape(dim)
    p = np.asarray(psi_init, dtype=float).reshape(dim)
    n_steps = int(np.ceil(t_end / step - 1e-9)) if t_end > 0 else 0
    F = system.joint_field

    times = [0.0]
    xs, ps = [x.copy()], [p.copy()]
    t = 0.0
    for i in range(n_steps):
        dt = min(step, t_end - t) if i == n_steps - 1 else step
        if method == "euler":
            fx, fp = F(x, p)
            x, p = x + dt * fx, p + dt * fp
        else:
            k1x, k1p = F(x, p)
            k2x, k2p = F(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
            k3x, k3p = F(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
            k4x, k4p = F(x + dt * k3x, p + dt * k3p)
            x = x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            p = p + (dt / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        if not (np.all(np.abs(x) <= DIVERGENCE_LIMIT) and np.all(np.abs(p) <= DIVERGENCE_LIMIT)):
            raise DivergenceError(f"joint flow diverged at step {i + 1}", index=i + 1)
        t = (i + 1) * step if i < n_steps - 1 else t_end
        times.append(t)
        xs.append(x)
        ps.append(p)
    xs, ps = np.array(xs), np.array(ps)
    H = np.array([system.hamiltonian(pk, xk) for xk, pk in zip(xs, ps)])
    return JointTrajectory(np.array(times), xs, ps, H)


@dataclass
class ConservationReport:
    max_drift: float
    relative_drift: float


def conservation_report(traj: JointTrajectory) -> ConservationReport:
    H = np.asarray(traj.hamiltonian)
    if H.size < 2:
        raise ValueError("need at least two samples")
    drift = float(np.max(np.abs(H - H[0])))
    return ConservationReport(drift, drift / max(1.0, abs(float(H[0]))))


def _rotation() -> AutonomousODE:
    return AutonomousODE.linear([[0.0, 1.0], [-1.0, 0.0]], "rotation")


def _pendulum() -> AutonomousODE:
    return AutonomousODE(
        2,
        lambda x: np.array([x[1], -np.sin(x[0])]),
        lambda x: np.array([[0.0, 1.0], [-np.cos(x[0]), 0.0]]),
        "pendulum",
    )


BUILTIN_ODES: dict[str, Callable[[], AutonomousODE]] = {
    "scalar_decay": lambda: AutonomousODE.linear([[-1.0]], "scalar_decay"),
    "rotation": _rotation,
    "zero": lambda: AutonomousODE(1, lambda x: np.zeros(1), lambda x: np.zeros((1, 1)), "zero"),
    "pendulum": _pendulum,
}


def builtin_ode(name: str) -> AutonomousODE:
    try:
        return BUILTIN_ODES[name]()
    except KeyError:
        raise ValueError(f"unknown ODE id {name!r}; choose from {sorted(BUILTIN_ODES)}") from None
