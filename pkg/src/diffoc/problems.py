"""Canonical experiment setups shared by the test suite and the CLI."""

from __future__ import annotations

import numpy as np

from .core import ParamVector
from .costs import QuadraticGoalCost
from .dynamics import DoublePendulum, LinearDynamics, Pendulum
from .solver import ProblemSpec, SolverOptions, solve_problem

SWINGUP_HORIZON = 50
SWINGUP_DT = 1e-2


def pendulum_theta(
    rho: float = 0.5,
    qf: float = 1e3,
    rho_bounds=(0.05, 2.0),
    qf_bounds=(0.5, 2e4),
) -> ParamVector:
    return ParamVector([rho, qf], ("rho", "qf"), [rho_bounds, qf_bounds])


def double_pendulum_theta(
    l1: float = 0.5,
    l2: float = 0.5,
    qf: float = 1e3,
    length_bounds=(0.05, 1.0),
    qf_bounds=(0.5, 2e4),
) -> ParamVector:
    return ParamVector(
        [l1, l2, qf], ("l1", "l2", "qf"), [length_bounds, length_bounds, qf_bounds]
    )


def pendulum_setup(mode: str = "ilqr", options: SolverOptions | None = None):
    """Swing-up problem for the single pendulum: model, cost, problem spec."""
    model = Pendulum()
    cost = QuadraticGoalCost(goal=[np.pi, 0.0])
    problem = ProblemSpec(
        x0=np.zeros(2),
        horizon=SWINGUP_HORIZON,
        dt=SWINGUP_DT,
        mode=mode,
        options=options or SolverOptions(),
    )
    return model, cost, problem


def double_pendulum_setup(mode: str = "ilqr", options: SolverOptions | None = None):
    """Swing-up problem for the double pendulum: model, cost, problem spec."""
    model = DoublePendulum()
    cost = QuadraticGoalCost(goal=[np.pi, 0.0, 0.0, 0.0])
    problem = ProblemSpec(
        x0=np.zeros(4),
        horizon=SWINGUP_HORIZON,
        dt=SWINGUP_DT,
        mode=mode,
        options=options or SolverOptions(),
    )
    return model, cost, problem


def double_integrator(dt: float = SWINGUP_DT) -> LinearDynamics:
    return LinearDynamics(A=[[1.0, dt], [0.0, 1.0]], B=[[0.0], [dt]])


def imitation_controls(model, cost, theta: ParamVector, problem: ProblemSpec) -> np.ndarray:
    """Data-generating controls: one cold-start solve at the given parameters.

    Re-solving at the same parameters with the same settings reproduces these
    controls bit for bit, which pins the imitation optimum exactly.
    """
    result = solve_problem(model, cost, theta, problem)
    if not result.converged:
        raise RuntimeError("data-generating solve did not converge")
    return result.trajectory.controls.copy()
