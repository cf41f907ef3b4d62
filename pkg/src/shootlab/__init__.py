"""Direct shooting and its indirect twin for scalar Euler-discretized optimal control."""

from .errors import (
    AdjointDiverged,
    ConfigError,
    DegenerateGridError,
    DivergenceError,
    PropagationDiverged,
    ScheduleError,
    SingularMetricError,
)
from .euler import (
    CostateTrajectory,
    IndirectResiduals,
    NonuniformGrid,
    Trajectory,
    UniformGrid,
    backward_adjoint,
    forward_simulate,
    hamiltonian_gradient_stack,
    indirect_residuals,
)
from .gradients import (
    ControlBasis,
    GradientReport,
    adaptive_gradient_decomposition,
    adjoint_gradient,
    basis_rank_check,
    fd_gradient,
    parameterized_gradient,
    stationarity_bound,
    verify_equivalence,
)
from .hamiltonian import (
    AutonomousODE,
    HamiltonianSystem,
    builtin_ode,
    conservation_report,
    hamiltonianize,
    integrate_joint,
)
from .problems import ScalarOCP, builtin_problem, check_derivatives, hamiltonian, hamiltonian_du
from .refinement import (
    Level,
    RefinementSchedule,
    discretization_convergence_probe,
    prolong_controls,
    solve_with_refinement,
)
from .solvers import (
    IterationTrace,
    SolverConfig,
    StepPolicy,
    integrate_gradient_flow,
    newton_hessian,
    solve_direct,
    solve_parameterized,
)

__version__ = "0.1.0"
