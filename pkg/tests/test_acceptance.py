"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest

from shootlab.config import parse_config
from shootlab.euler import UniformGrid, forward_simulate
from shootlab.experiments import run_basin, run_sweep_accuracy
from shootlab.gradients import (
    ULP_SLACK,
    ControlBasis,
    adaptive_gradient_decomposition,
    adjoint_gradient,
    fd_gradient,
    stationarity_bound,
)
from shootlab.hamiltonian import builtin_ode, conservation_report, hamiltonianize, integrate_joint
from shootlab.problems import BUILTIN_PROBLEMS, builtin_problem
from shootlab.solvers import SolverConfig, StepPolicy, solve_direct, solve_parameterized


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def rel_equal(a, b, rtol=1e-12):
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def test_criterion_01_covector_identity(acceptance):
    worst_ident = worst_fd = 0.0
    with Clock() as clock:
        for name in BUILTIN_PROBLEMS:
            p = builtin_problem(name)
            for n in (2, 8, 32):
                g = UniformGrid(0.0, 1.0, n)
                rng = np.random.default_rng(1000 * n + BUILTIN_PROBLEMS.index(name))
                for _ in range(10):
                    u = rng.uniform(-1.0, 1.0, n)
                    r = adjoint_gradient(p, g, u)
                    scaled = g.h * r.stationarity
                    diff = np.abs(r.gradient - scaled)
                    scale = np.maximum(np.abs(r.gradient), np.abs(scaled))
                    ident = float(np.max(np.where(diff == 0, 0.0, diff / np.where(scale == 0, 1.0, scale))))
                    fd = fd_gradient(p, g, u, 1e-6)
                    dev = np.max(np.abs(fd - r.gradient)) / max(1.0, r.grad_inf_norm)
                    worst_ident, worst_fd = max(worst_ident, ident), max(worst_fd, dev)
    ok = worst_ident <= ULP_SLACK and worst_fd <= 1e-5 and clock.seconds < 5
    acceptance(1, ok, f"identity dev {worst_ident:.2e} (<= 4 ulp), fd dev {worst_fd:.2e} (<= 1e-5), "
                      f"{clock.seconds:.2f}s")
    assert ok


def test_criterion_02_stationarity_bound_factor(acceptance):
    details, ok = [], True
    with Clock() as clock:
        for name in ("linear_integrator", "damped_linear"):
            p = builtin_problem(name)
            g = UniformGrid(0.0, 1.0, 100)
            assert g.h == 0.01
            cfg = SolverConfig(step_policy=StepPolicy.compensated(), tolerance_eps=1e-6, max_iterations=10_000)
            u, trace = solve_direct(p, g, np.zeros(100), cfg)
            r = adjoint_gradient(p, g, u)
            b = stationarity_bound(r, g)
            ok &= trace.converged and b.epsilon <= 1e-6
            ok &= rel_equal(b.max_stationarity, b.epsilon / g.h) and b.max_stationarity <= 1e-4
            ok &= rel_equal(b.bound / b.epsilon, 100.0)
            details.append(f"{name}: max|dH/du|={b.max_stationarity:.3e}, factor={b.bound / b.epsilon:.15g}")
    ok &= clock.seconds < 5
    acceptance(2, ok, "; ".join(details) + f", {clock.seconds:.2f}s")
    assert ok


def test_criterion_03_accuracy_degradation_sweep(acceptance):
    with Clock() as clock:
        rep = run_sweep_accuracy(parse_config({"problem": "damped_linear"}))
    fixed, coord = rep.tables["fixed_eps"], rep.tables["coordinated"]
    bounds = fixed.column("eps_over_h")
    bounds_ok = len(bounds) == 3 and all(rel_equal(b, e) for b, e in zip(bounds, [1e-5, 1e-4, 1e-3]))
    measured = coord.column("measured_max_dH_du")
    coord_ok = all(s == "converged" for s in coord.column("status")) and all(m <= 1e-4 for m in measured)
    ok = bounds_ok and coord_ok and rep.passed and clock.seconds < 30
    acceptance(3, ok, f"bounds {[f'{b:.3g}' for b in bounds]}, coordinated max {max(measured):.3e}, "
                      f"{clock.seconds:.2f}s")
    assert ok


def test_criterion_04_rate_collapse(acceptance):
    p = builtin_problem("linear_integrator")
    iters, preds, comp = [], [], []
    with Clock() as clock:
        for n in (10, 20, 40):
            g = UniformGrid(0.0, 1.0, n)
            # g_k = h * x_N here, so ||g|| <= h * 1e-8 is exactly |x_N| <= 1e-8
            cfg = SolverConfig(step_policy=StepPolicy.fixed(1.0), tolerance_eps=g.h * 1e-8, max_iterations=100_000)
            u, trace = solve_direct(p, g, np.zeros(n), cfg)
            assert abs(forward_simulate(p, g, u).terminal_state) <= 1e-8
            iters.append(trace.iterations)
            preds.append(math.log(1e-8) / math.log(1 - g.h))
            _, tc = solve_direct(p, g, np.zeros(n), SolverConfig(step_policy=StepPolicy.compensated(),
                                                                tolerance_eps=g.h * 1e-8))
            comp.append(tc.iterations if tc.converged else math.inf)
    ratios = [b / a for a, b in zip(iters, iters[1:])]
    ok = all(abs(i - q) <= 2 for i, q in zip(iters, preds))
    ok &= all(1.8 <= r <= 2.2 for r in ratios) and all(c <= 2 for c in comp) and clock.seconds < 10
    acceptance(4, ok, f"iterations {iters} vs closed form {[round(q, 1) for q in preds]}, "
                      f"ratios {[round(r, 3) for r in ratios]}, compensated {comp}, {clock.seconds:.2f}s")
    assert ok


def test_criterion_05_mode_equivalence(acceptance):
    p = builtin_problem("cubic_drag")
    n, alpha = 16, 1.0
    g = UniformGrid(0.0, 1.0, n)
    u0 = np.random.default_rng(5).uniform(-1.0, 1.0, n)
    common = dict(tolerance_eps=1e-300, max_iterations=100, keep_iterates=True)
    with Clock() as clock:
        _, td = solve_direct(p, g, u0, SolverConfig(step_policy=StepPolicy.fixed(alpha), **common))
        _, ti = solve_direct(p, g, u0, SolverConfig(step_policy=StepPolicy.fixed(alpha * g.h),
                                                    mode="indirect_variational", **common))
    worst = 0.0
    for a, b in zip(td.iterates, ti.iterates):
        scale = np.maximum(np.abs(a), np.abs(b))
        worst = max(worst, float(np.max(np.abs(a - b) / np.where(scale == 0, 1.0, scale))))
    ok = len(td.iterates) == len(ti.iterates) == 101 and worst <= 1e-12 and clock.seconds < 2
    acceptance(5, ok, f"{len(td.iterates) - 1} iterations, worst relative gap {worst:.2e}, {clock.seconds:.2f}s")
    assert ok


def test_criterion_06_basin_inequality(acceptance):
    cfg = parse_config({
        "problem": "cubic_drag",
        "n_intervals": 20,
        "solver": {"step_policy": "fixed", "tolerance": 1e-6},
        "basin": {"alpha": 1.0, "count": 41, "max_iterations": 5000},
    })
    with Clock() as clock:
        rep = run_basin(cfg)
    counts = dict((r[0], r[1]) for r in rep.tables["basin_size"].rows)
    ok = (rep.verdicts["direct_basin_at_least_indirect"] and rep.verdicts["matched_maps_identical"]
          and counts["direct"] >= counts["indirect"] and clock.seconds < 30)
    acceptance(6, ok, f"converged direct {counts['direct']}, indirect {counts['indirect']}, "
                      f"matched {counts['indirect_matched']} of 41, {clock.seconds:.2f}s")
    assert ok


def test_criterion_07_adaptive_grid_noise(acceptance):
    p = builtin_problem("damped_linear")
    u = np.sin(np.arange(16.0))
    with Clock() as clock:
        ident = adaptive_gradient_decomposition(p, "identity", u).noise_norm
        arc = adaptive_gradient_decomposition(p, "arclength", u).noise_norm
    ok = ident <= 1e-7 and arc >= 10 * ident and clock.seconds < 5
    acceptance(7, ok, f"identity {ident:.2e}, arclength {arc:.2e}, {clock.seconds:.2f}s")
    assert ok


def test_criterion_08_hamiltonianization(acceptance):
    system = hamiltonianize(builtin_ode("scalar_decay"))
    with Clock() as clock:
        traj = integrate_joint(system, [1.0], [1.0], 1.0, 1e-3)
        half = integrate_joint(system, [1.0], [1.0], 1.0, 5e-4)
    dev = float(np.max(np.abs(traj.hamiltonian + 1.0)))
    d1, d2 = conservation_report(traj).max_drift, conservation_report(half).max_drift
    shrink = d1 / d2 if d2 > 0 else math.inf
    # the same ratio where truncation rather than rounding dominates, for the log
    t1 = conservation_report(integrate_joint(system, [1.0], [1.0], 1.0, 0.05)).max_drift
    t2 = conservation_report(integrate_joint(system, [1.0], [1.0], 1.0, 0.025)).max_drift
    ok = dev <= 1e-9 and 8 <= shrink <= 32 and clock.seconds < 2
    acceptance(8, ok, f"|H+1| max {dev:.2e}; drift {d1:.2e} -> {d2:.2e} on halving 1e-3, factor {shrink:.3g} "
                      f"(needs [8, 32]); truncation-regime factor 0.05->0.025 is {t1 / t2:.4g}, "
                      f"{clock.seconds:.2f}s")
    assert ok


def test_criterion_09_unit_step(acceptance):
    ok = True
    with Clock() as clock:
        for name in BUILTIN_PROBLEMS:
            p = builtin_problem(name)
            for n in (1, 3, 6):
                g = UniformGrid(0.0, float(n), n)
                assert g.h == 1.0
                u = np.random.default_rng(n).uniform(-0.5, 0.5, n)
                r = adjoint_gradient(p, g, u)
                ok &= bool(np.array_equal(r.gradient, r.stationarity))
    ok &= clock.seconds < 1
    acceptance(9, ok, f"gradient == dH/du stack bitwise on h = 1 grids, {clock.seconds:.3f}s")
    assert ok


def test_criterion_10_rank_guard(acceptance):
    p = builtin_problem("cubic_drag")
    g = UniformGrid(0.0, 1.0, 16)
    basis = ControlBasis.duplicated(ControlBasis(1, lambda j, t: t - 0.5))
    cfg = SolverConfig(step_policy=StepPolicy.backtracking(alpha0=100.0), tolerance_eps=1e-10, max_iterations=2000)
    with Clock() as clock:
        c, trace = solve_parameterized(p, g, basis, [6.0, 6.0], cfg)
    B = basis.matrix(g)
    inner = adjoint_gradient(p, g, B @ c).gradient
    coeff_norm = float(np.max(np.abs(B.T @ inner)))
    null_part = float(np.max(np.abs(inner - B @ np.linalg.pinv(B) @ inner)))
    warned = any("rank-deficient" in w for w in trace.warnings)
    ok = trace.converged and coeff_norm <= 1e-10 and null_part > 1e-6 and warned and clock.seconds < 2
    acceptance(10, ok, f"{trace.iterations} iterations, ||B^T g|| {coeff_norm:.1e}, "
                       f"null-space ||g|| {null_part:.2e}, warning {warned}, {clock.seconds:.2f}s")
    assert ok


def test_criterion_11_discretization_convergence(acceptance):
    p = builtin_problem("damped_linear")
    with Clock() as clock:
        errs = [abs(forward_simulate(p, UniformGrid(0.0, 1.0, n), np.zeros(n)).terminal_state - math.exp(-1.0))
                for n in (4, 8, 16, 32, 64)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(1.7 <= r <= 2.3 for r in ratios) and clock.seconds < 1
    acceptance(11, ok, f"error ratios {[round(r, 3) for r in ratios]}, {clock.seconds:.3f}s")
    assert ok
