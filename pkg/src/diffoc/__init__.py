"""Trajectory optimization with exact hyper-parameter gradients.

DDP/iLQR solvers for discrete-time nonlinear optimal control, plus a
sensitivity pass that differentiates any scalar upper-level cost through the
converged solution by solving one auxiliary LQR. Includes pendulum and
double-pendulum plants, dense and finite-difference oracles, a bi-level
gradient-descent driver, and a CLI experiment runner.
"""

from .bilevel import BilevelIterate, BilevelRun, optimize
from .core import (
    DynamicsError,
    NotConvergedError,
    OracleError,
    ParamVector,
    SolverError,
    Trajectory,
    tensor_contract_left,
)
from .costs import CostExpansion, CostModel, QuadraticGoalCost
from .dynamics import (
    DerivativeBundle,
    DoublePendulum,
    DynamicsModel,
    LinearDynamics,
    Pendulum,
    fd_derivatives,
)
from .sensitivity import (
    GradientResult,
    SensitivitySolution,
    dense_kkt_oracle,
    differential_lqr,
    differentiate,
    gradient_from_solution,
    multipliers,
    parameter_gradient,
)
from .solver import (
    GainSchedule,
    ProblemSpec,
    QExpansion,
    SolveResult,
    SolverOptions,
    ValueExpansion,
    backward_pass,
    forward_pass,
    rollout,
    solve,
    solve_problem,
)
from .upper import (
    CoDesignCost,
    ControlImitationCost,
    QuadraticImitationCost,
    UpperLevelCost,
    UpperLevelGradients,
    VelocityImitationCost,
)
from .validation import (
    GradReport,
    GradSample,
    SliceResult,
    SweepSpec,
    fd_bilevel_oracle,
    gradient_error_sweep,
    gradient_slice,
)

__all__ = [
    "BilevelIterate",
    "BilevelRun",
    "CoDesignCost",
    "ControlImitationCost",
    "CostExpansion",
    "CostModel",
    "DerivativeBundle",
    "DoublePendulum",
    "DynamicsError",
    "DynamicsModel",
    "GainSchedule",
    "GradReport",
    "GradSample",
    "GradientResult",
    "LinearDynamics",
    "NotConvergedError",
    "OracleError",
    "ParamVector",
    "Pendulum",
    "QuadraticImitationCost",
    "ProblemSpec",
    "QExpansion",
    "QuadraticGoalCost",
    "SensitivitySolution",
    "SliceResult",
    "SolveResult",
    "SolverError",
    "SolverOptions",
    "SweepSpec",
    "Trajectory",
    "UpperLevelCost",
    "UpperLevelGradients",
    "ValueExpansion",
    "VelocityImitationCost",
    "backward_pass",
    "dense_kkt_oracle",
    "differential_lqr",
    "differentiate",
    "fd_bilevel_oracle",
    "fd_derivatives",
    "forward_pass",
    "gradient_error_sweep",
    "gradient_from_solution",
    "gradient_slice",
    "multipliers",
    "optimize",
    "parameter_gradient",
    "rollout",
    "solve",
    "solve_problem",
    "tensor_contract_left",
]
