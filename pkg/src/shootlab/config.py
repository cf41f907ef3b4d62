"""Experiment configuration: a TOML file mapped onto nested dataclasses.

Every field has a default, so an empty file is a valid configuration.
Unknown keys and ill-typed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .problems import BUILTIN_PROBLEMS
from .solvers import METHODS, MODES, STEP_POLICIES, SolverConfig, StepPolicy


@dataclass
class SolverSection:
    method: str = "gradient"
    step_policy: str = "compensated"
    alpha: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    mu: Union[str, float] = "auto"
    mode: str = "direct"
    fd_step: float = 1e-6

    def build(self, **overrides) -> SolverConfig:
        mu = None if self.mu == "auto" else float(self.mu)
        fields = dict(
            method=self.method,
            step_policy=StepPolicy(self.step_policy, self.alpha, self.shrink, self.armijo_c),
            tolerance_eps=self.tolerance,
            max_iterations=self.max_iterations,
            hessian_regularization_mu=mu,
            mode=self.mode,
            fd_step=self.fd_step,
        )
        fields.update(overrides)
        return SolverConfig(**fields)


@dataclass
class ControlsSection:
    # "auto" resolves per command: "random" for verify/gradcheck,
    # "sine" for adaptive-noise, "zeros" elsewhere.
    initial: Union[str, list] = "auto"
    offset: float = 0.0
    amplitude: float = 1.0
    basis: str = "none"
    basis_degree: int = 3


@dataclass
class VerifySection:
    fd_step: float = 1e-6
    tolerance: float = 1e-5


@dataclass
class GradcheckSection:
    probes: int = 100
    n_list: list = field(default_factory=lambda: [2, 8, 32])
    samples: int = 10
    fd_step: float = 1e-6
    tolerance: float = 1e-5


@dataclass
class SweepAccuracySection:
    h_list: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    eps: float = 1e-6
    # eps_i = coordinated_ratio * h_i in the coordinated run; 0 disables it
    coordinated_ratio: float = 1e-4


@dataclass
class SweepRateSection:
    h_list: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    alpha: float = 1.0
    # the solver stops once max|dH/du| <= stationarity_tol, i.e. ||g|| <= h * stationarity_tol
    stationarity_tol: float = 1e-8
    max_iterations: int = 100_000


@dataclass
class BasinSection:
    offset_min: float = -10.0
    offset_max: float = 10.0
    count: int = 41
    dimensions: int = 1
    alpha: float = 1.0
    max_iterations: int = 10_000
    workers: int = 1


@dataclass
class AdaptiveNoiseSection:
    adaptation: str = "arclength"
    fd_step: float = 1e-6
    identity_limit: float = 1e-7
    factor: float = 10.0


@dataclass
class HamiltonianizeSection:
    ode: str = "scalar_decay"
    x_init: list = field(default_factory=list)  # empty: all ones
    psi_init: list = field(default_factory=list)
    t_end: float = 1.0
    step: float = 1e-3
    method: str = "rk4"
    drift_tolerance: float = 1e-9


@dataclass
class RefineSection:
    n0: int = 8
    n_levels: int = 3
    ratio: float = 1e-4
    # > 0 switches to a fixed eps at every level (no ratio lock)
    fixed_eps: float = 0.0
    target_ratio: float = 0.0  # 0: same as ratio
    max_inner_iterations: int = 10_000


@dataclass
class ExperimentConfig:
    problem: str = "linear_integrator"
    n_intervals: int = 10
    seed: int = 0
    output: str = ""
    format: str = "json"
    solver: SolverSection = field(default_factory=SolverSection)
    controls: ControlsSection = field(default_factory=ControlsSection)
    verify: VerifySection = field(default_factory=VerifySection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    sweep_accuracy: SweepAccuracySection = field(default_factory=SweepAccuracySection)
    sweep_rate: SweepRateSection = field(default_factory=SweepRateSection)
    basin: BasinSection = field(default_factory=BasinSection)
    adaptive_noise: AdaptiveNoiseSection = field(default_factory=AdaptiveNoiseSection)
    hamiltonianize: HamiltonianizeSection = field(default_factory=HamiltonianizeSection)
    refine: RefineSection = field(default_factory=RefineSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, value: Any, default: Any, annotation: Any):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        return _build(type(default), value, prefix=name + ".")
    ann = str(annotation)
    if "Union" in ann:
        if isinstance(value, (str, list, int, float)) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: unsupported value {value!r}")
    if isinstance(default, bool) or isinstance(value, bool):
        if type(value) is not type(default):
            raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, (int, float)):
            return float(value)
    elif isinstance(default, int):
        if isinstance(value, int):
            return value
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, list):
            return value
    raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")


def _build(cls, data: dict, prefix: str = ""):
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(prefix + key, value, getattr(defaults, key), known[key].type)
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data)
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_config(data)


def validate(cfg: ExperimentConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.problem in BUILTIN_PROBLEMS, f"problem must be one of {BUILTIN_PROBLEMS}")
    need(cfg.n_intervals >= 1, "n_intervals must be >= 1")
    need(cfg.seed >= 0, "seed must be non-negative")
    need(cfg.format in ("json", "csv"), "format must be json or csv")
    s = cfg.solver
    need(s.method in METHODS, f"solver.method must be one of {METHODS}")
    need(s.step_policy in STEP_POLICIES, f"solver.step_policy must be one of {STEP_POLICIES}")
    need(s.mode in MODES, f"solver.mode must be one of {MODES}")
    need(s.alpha > 0 and s.tolerance > 0 and s.fd_step > 0, "solver alpha, tolerance, fd_step must be positive")
    need(0 < s.shrink < 1 and 0 < s.armijo_c < 1, "solver shrink and armijo_c must lie in (0, 1)")
    need(s.max_iterations >= 1, "solver.max_iterations must be >= 1")
    need(s.mu == "auto" or (isinstance(s.mu, (int, float)) and s.mu >= 0), "solver.mu must be 'auto' or >= 0")
    c = cfg.controls
    if isinstance(c.initial, list):
        need(len(c.initial) > 0, "controls.initial must not be empty")
        need(all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in c.initial),
             "controls.initial entries must be numbers")
    else:
        need(c.initial in ("auto", "zeros", "random", "sine"),
             "controls.initial must be auto, zeros, random, sine or a list of numbers")
    need(c.basis in ("none", "constant", "monomial", "indicator", "duplicated"), "unknown controls.basis")
    need(c.basis_degree >= 0, "controls.basis_degree must be >= 0")
    need(len(cfg.sweep_accuracy.h_list) > 0, "sweep_accuracy.h_list must not be empty")
    need(len(cfg.sweep_rate.h_list) > 0, "sweep_rate.h_list must not be empty")
    need(all(isinstance(h, (int, float)) and h > 0 for h in cfg.sweep_accuracy.h_list + cfg.sweep_rate.h_list),
         "h lists must hold positive numbers")
    need(cfg.sweep_accuracy.eps > 0 and cfg.sweep_accuracy.coordinated_ratio >= 0, "invalid sweep_accuracy tolerances")
    b = cfg.basin
    need(b.count >= 1 and b.dimensions in (1, 2) and b.offset_max >= b.offset_min, "invalid basin lattice")
    need(b.alpha > 0 and b.max_iterations >= 1 and b.workers >= 1, "invalid basin solver settings")
    need(cfg.adaptive_noise.adaptation in ("identity", "arclength"), "unknown adaptation rule")
    hm = cfg.hamiltonianize
    need(hm.method in ("rk4", "euler") and hm.step > 0 and hm.t_end >= 0, "invalid hamiltonianize settings")
    r = cfg.refine
    need(r.n0 >= 1 and r.n_levels >= 1 and r.ratio > 0 and r.fixed_eps >= 0 and r.target_ratio >= 0,
         "invalid refine schedule")
    g = cfg.gradcheck
    need(g.probes >= 1 and g.samples >= 1 and len(g.n_list) > 0 and all(isinstance(n, int) and n >= 1 for n in g.n_list),
         "invalid gradcheck settings")
