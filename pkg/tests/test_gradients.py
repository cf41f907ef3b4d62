import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shootlab.errors import DegenerateGridError
from shootlab.euler import CostateTrajectory, NonuniformGrid, UniformGrid
from shootlab.gradients import (
    ULP_SLACK,
    ControlBasis,
    adaptive_gradient_decomposition,
    adjoint_gradient,
    basis_rank_check,
    fd_gradient,
    parameterized_gradient,
    reduced_cost,
    stationarity_bound,
    verify_equivalence,
)
from shootlab.problems import BUILTIN_PROBLEMS, builtin_problem


def grid(n, tf=1.0):
    return UniformGrid(0.0, tf, n)


def test_damped_linear_two_interval_example():
    r = adjoint_gradient(builtin_problem("damped_linear"), grid(2), [0.0, 0.0])
    assert r.gradient.tolist() == [0.0625, 0.125]
    assert r.stationarity.tolist() == [0.125, 0.25]
    assert r.cost == 0.5 * 0.25**2


def test_linear_integrator_gradient_is_h_times_terminal_state():
    u = np.array([0.2, -0.7, 1.1, 0.0, 0.3])
    r = adjoint_gradient(builtin_problem("linear_integrator"), grid(5), u)
    xN = 1.0 + 0.2 * u.sum()
    np.testing.assert_allclose(r.gradient, np.full(5, 0.2 * xN), rtol=1e-15)


@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
@pytest.mark.parametrize("n", [2, 8, 32])
def test_adjoint_matches_fd(name, n):
    p = builtin_problem(name)
    u = np.random.default_rng(n).uniform(-1, 1, n)
    ad = adjoint_gradient(p, grid(n), u).gradient
    fd = fd_gradient(p, grid(n), u)
    assert np.max(np.abs(fd - ad)) / max(1.0, np.max(np.abs(ad))) <= 1e-7


def test_nonuniform_adjoint_matches_fd():
    p = builtin_problem("cubic_drag")
    g = NonuniformGrid([0.0, 0.05, 0.3, 0.42, 0.8, 1.0])
    u = np.array([0.5, -0.2, 1.0, 0.1, -0.6])
    r = adjoint_gradient(p, g, u)
    np.testing.assert_allclose(r.gradient, fd_gradient(p, g, u), rtol=0, atol=1e-8)
    np.testing.assert_array_equal(r.gradient, g.steps * r.stationarity)


def test_fd_step_must_be_positive():
    with pytest.raises(ValueError):
        fd_gradient(builtin_problem("bilinear"), grid(3), np.zeros(3), fd_step=0.0)


def test_verify_equivalence_passes_on_builtins():
    for name in BUILTIN_PROBLEMS:
        v = verify_equivalence(builtin_problem(name), grid(8), np.linspace(-1, 1, 8))
        assert v.passed, name
        assert v.identity_deviation <= ULP_SLACK


def test_verify_equivalence_catches_corrupted_costates():
    p = builtin_problem("damped_linear")
    r = adjoint_gradient(p, grid(8), np.zeros(8))
    bad = r.costates.costates.copy()
    bad[3] *= 1.5
    v = verify_equivalence(p, grid(8), np.zeros(8), costates=CostateTrajectory(bad))
    assert not v.passed
    assert v.fd_deviation > 1e-3


def test_stationarity_bound_example():
    # h = 0.01; the gradient of size eps bounds max|dH/du| by eps/h = 100 eps
    p = builtin_problem("linear_integrator")
    g = grid(100)
    u = np.full(100, -1.0 + 1e-6)  # x_N = 1e-6 -> grad entries h * 1e-6
    r = adjoint_gradient(p, g, u)
    b = stationarity_bound(r, g)
    assert b.satisfied
    assert b.bound / b.epsilon == pytest.approx(100.0, rel=1e-12)
    assert b.max_stationarity == pytest.approx(b.bound, rel=1e-12)


def test_reduced_cost_matches_report():
    p = builtin_problem("bilinear")
    u = np.array([0.3, -0.4, 0.9])
    assert reduced_cost(p, grid(3), u) == adjoint_gradient(p, grid(3), u).cost


def test_basis_matrices():
    g = grid(4)
    np.testing.assert_array_equal(ControlBasis.constant().matrix(g), np.ones((4, 1)))
    np.testing.assert_array_equal(ControlBasis.indicators(g).matrix(g), np.eye(4))
    np.testing.assert_allclose(ControlBasis.monomials(2).matrix(g)[:, 2], [0, 0.0625, 0.25, 0.5625])


def test_basis_rank_check():
    g = grid(8)
    assert basis_rank_check(ControlBasis.monomials(3), g) == (4, True)
    assert basis_rank_check(ControlBasis.duplicated(), g) == (1, False)
    assert basis_rank_check(ControlBasis.zero(2), g) == (0, False)
    with pytest.raises(ValueError, match="over-parameterized"):
        basis_rank_check(ControlBasis.monomials(9), g)


def test_parameterized_gradient_chain_rule():
    p = builtin_problem("cubic_drag")
    g = grid(10)
    basis = ControlBasis.monomials(2)
    c = np.array([0.1, -0.5, 0.8])
    gc, inner = parameterized_gradient(p, g, basis, c)
    B = basis.matrix(g)
    fd = np.array(
        [(reduced_cost(p, g, B @ (c + e)) - reduced_cost(p, g, B @ (c - e))) / 2e-6 for e in 1e-6 * np.eye(3)]
    )
    np.testing.assert_allclose(gc, fd, atol=1e-8)
    np.testing.assert_allclose(gc, B.T @ inner.gradient)


def test_identity_adaptation_has_no_noise():
    d = adaptive_gradient_decomposition(builtin_problem("damped_linear"), "identity", np.sin(np.arange(16.0)))
    assert d.noise_norm <= 1e-7


def test_arclength_adaptation_exposes_noise():
    u = np.sin(np.arange(16.0))
    p = builtin_problem("damped_linear")
    ident = adaptive_gradient_decomposition(p, "identity", u).noise_norm
    arc = adaptive_gradient_decomposition(p, "arclength", u)
    assert arc.grid.nodes[-1] == 1.0
    assert arc.noise_norm >= 10 * ident
    assert arc.noise_norm > 1e-3


def test_degenerate_adaptation_raises():
    def collapse(problem, u):
        return UniformGrid(0.0, 1.0, u.size) if u[0] == 0 else NonuniformGrid([0.0, 1.0, 1.0 + 1e-300])

    with pytest.raises(DegenerateGridError):
        adaptive_gradient_decomposition(builtin_problem("linear_integrator"), collapse, np.zeros(2))


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(BUILTIN_PROBLEMS),
    st.integers(1, 30),
    st.integers(0, 2**32 - 1),
)
def test_uniform_gradient_is_h_times_stationarity_exactly(name, n, seed):
    u = np.random.default_rng(seed).uniform(-2, 2, n)
    g = grid(n)
    r = adjoint_gradient(builtin_problem(name), g, u)
    np.testing.assert_array_equal(r.gradient, g.h * r.stationarity)
    b = stationarity_bound(r, g)
    assert b.satisfied


@given(st.integers(1, 12))
def test_unit_step_gradient_equals_stack(n):
    p = builtin_problem("bilinear")
    g = UniformGrid(0.0, float(n), n)
    assert g.h == 1.0
    r = adjoint_gradient(p, g, np.full(n, -0.1))
    np.testing.assert_array_equal(r.gradient, r.stationarity)
