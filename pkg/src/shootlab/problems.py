"""Scalar optimal control problem data and the built-in test problems.

A problem is: minimize E(x(tf)) subject to x' = f(x, u), x(t0) = x0, with
scalar state and control. Derivatives are supplied in closed form and can be
audited against central differences with :func:`check_derivatives`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ScalarFn2 = Callable[[float, float], float]
ScalarFn1 = Callable[[float], float]

BUILTIN_PROBLEMS = ("linear_integrator", "damped_linear", "bilinear", "cubic_drag")

DERIVATIVE_TOLERANCE = 1e-5


@dataclass(frozen=True)
class ScalarOCP:
    """Endpoint-cost optimal control problem with scalar state and control."""

    dynamics: ScalarFn2
    dynamics_dx: ScalarFn2
    dynamics_du: ScalarFn2
    endpoint_cost: ScalarFn1
    endpoint_cost_dx: ScalarFn1
    x0: float = 1.0
    t0: float = 0.0
    tf: float = 1.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.tf)) or self.tf <= self.t0:
            raise ValueError(f"need finite t0 < tf, got t0={self.t0}, tf={self.tf}")
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")

    @property
    def horizon(self) -> float:
        return self.tf - self.t0


def hamiltonian(problem: ScalarOCP, lam: float, x: float, u: float) -> float:
    """Pontryagin Hamiltonian ``lam * f(x, u)``."""
    value = lam * problem.dynamics(x, u)
    if not math.isfinite(value):
        raise ArithmeticError(f"non-finite Hamiltonian at lam={lam}, x={x}, u={u}")
    return value


def hamiltonian_du(problem: ScalarOCP, lam: float, x: float, u: float) -> float:
    """Control derivative of the Hamiltonian, ``lam * df/du``."""
    value = lam * problem.dynamics_du(x, u)
    if not math.isfinite(value):
        raise ArithmeticError(f"non-finite dH/du at lam={lam}, x={x}, u={u}")
    return value


def _half_square(x):
    return 0.5 * x * x


def _identity(x):
    return x


def builtin_problem(name: str) -> ScalarOCP:
    """Return one of the built-in test problems (all on t in [0, 1], x0 = 1).

    ``linear_integrator``  f = u,         E = x^2/2
    ``damped_linear``      f = -x + u,    E = x^2/2
    ``bilinear``           f = x*u,       E = x^2/2
    ``cubic_drag``         f = -x^3 + u,  E = (x - 0.5)^2/2
    """
    if name == "linear_integrator":
        return ScalarOCP(
            dynamics=lambda x, u: u,
            dynamics_dx=lambda x, u: 0.0,
            dynamics_du=lambda x, u: 1.0,
            endpoint_cost=_half_square,
            endpoint_cost_dx=_identity,
            name=name,
        )
    if name == "damped_linear":
        return ScalarOCP(
            dynamics=lambda x, u: -x + u,
            dynamics_dx=lambda x, u: -1.0,
            dynamics_du=lambda x, u: 1.0,
            endpoint_cost=_half_square,
            endpoint_cost_dx=_identity,
            name=name,
        )
    if name == "bilinear":
        return ScalarOCP(
            dynamics=lambda x, u: x * u,
            dynamics_dx=lambda x, u: u,
            dynamics_du=lambda x, u: x,
            endpoint_cost=_half_square,
            endpoint_cost_dx=_identity,
            name=name,
        )
    if name == "cubic_drag":
        return ScalarOCP(
            dynamics=lambda x, u: -x * x * x + u,
            dynamics_dx=lambda x, u: -3.0 * x * x,
            dynamics_du=lambda x, u: 1.0,
            endpoint_cost=lambda x: 0.5 * (x - 0.5) ** 2,
            endpoint_cost_dx=lambda x: x - 0.5,
            name=name,
        )
    raise ValueError(f"unknown problem id {name!r}; choose from {BUILTIN_PROBLEMS}")


@dataclass
class DerivativeReport:
    max_error_dx: float
    max_error_du: float
    max_error_cost_dx: float
    probes: int
    tolerance: float = DERIVATIVE_TOLERANCE

    @property
    def failures(self) -> list[str]:
        names = {
            "dynamics_dx": self.max_error_dx,
            "dynamics_du": self.max_error_du,
            "endpoint_cost_dx": self.max_error_cost_dx,
        }
        return [k for k, v in names.items() if not v <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


def _rel_err(supplied, reference):
    return abs(supplied - reference) / max(1.0, abs(reference))


def check_derivatives(
    problem: ScalarOCP, probes: int = 100, seed: int = 0, fd_step: float = 1e-6
) -> DerivativeReport:
    """Compare supplied derivatives with central differences at random probes.

    Probes are uniform on [-2, 2]^2. The error measure is
    ``|supplied - fd| / max(1, |fd|)``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, size=(probes, 2))
    f, fx, fu = problem.dynamics, problem.dynamics_dx, problem.dynamics_du
    E, Ex = problem.endpoint_cost, problem.endpoint_cost_dx
    d = fd_step
    err_x = err_u = err_e = 0.0
    for x, u in pts:
        x, u = float(x), float(u)
        fd_x = (f(x + d, u) - f(x - d, u)) / (2 * d)
        fd_u = (f(x, u + d) - f(x, u - d)) / (2 * d)
        fd_e = (E(x + d) - E(x - d)) / (2 * d)
        err_x = max(err_x, _rel_err(fx(x, u), fd_x))
        err_u = max(err_u, _rel_err(fu(x, u), fd_u))
        err_e = max(err_e, _rel_err(Ex(x), fd_e))
    return DerivativeReport(err_x, err_u, err_e, probes)
