"""Outer-loop projected gradient descent over the problem parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParamVector, SolverError
from .costs import CostModel
from .dynamics import DynamicsModel
from .sensitivity import gradient_from_solution
from .solver import ProblemSpec, solve_problem
from .upper import UpperLevelCost


@dataclass(frozen=True)
class BilevelIterate:
    theta: np.ndarray
    objective: float
    grad_inf: float
    inner_iterations: int
    inner_converged: bool


@dataclass(frozen=True)
class BilevelRun:
    history: list[BilevelIterate]
    theta: ParamVector
    stop: str  # grad_tol | max_iters | inner_failure | diverged

    @property
    def objective(self) -> float:
        return self.history[-1].objective


def optimize(
    model: DynamicsModel,
    cost: CostModel,
    ul_cost: UpperLevelCost,
    theta0: ParamVector,
    problem: ProblemSpec,
    rates,
    derivative_mode: str = "ddp",
    grad_tol: float = 1e-6,
    max_iters: int = 500,
    divergence_factor: float = 10.0,
) -> BilevelRun:
    """Plain projected gradient descent on the upper-level cost.

    Args:
        rates: learning rate, scalar or per-component array; a zero component
            freezes that parameter (it is also excluded from the gradient
            stopping test).
        grad_tol: stop when the masked gradient infinity norm drops below it.
        divergence_factor: stop with reason "diverged" once the objective
            exceeds this multiple of its initial value.

    Every iterate is projected onto the parameter bounds. Inner solves are
    warm-started from the previous trajectory with a cold-start fallback; a
    failed inner solve ends the run with reason "inner_failure".
    """
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (len(theta0),)).copy()
    if np.any(rates < 0):
        raise ValueError("learning rates must be non-negative")
    active = rates > 0

    theta = theta0
    history: list[BilevelIterate] = []
    warm = None
    initial_objective = None
    stop = "max_iters"

    for _ in range(max_iters):
        result = None
        try:
            result = solve_problem(
                model, cost, theta, problem, initial_controls=warm, tape_order="full"
            )
        except SolverError:
            result = None
        if (result is None or not result.converged) and warm is not None:
            try:
                result = solve_problem(model, cost, theta, problem, tape_order="full")
            except SolverError:
                result = None
        if result is None or not result.converged:
            history.append(
                BilevelIterate(
                    theta=theta.values.copy(),
                    objective=float("nan"),
                    grad_inf=float("nan"),
                    inner_iterations=0 if result is None else result.iterations,
                    inner_converged=False,
                )
            )
            stop = "inner_failure"
            break

        objective = ul_cost.value(result.trajectory, theta)
        grad = gradient_from_solution(result, ul_cost, derivative_mode).grad
        grad_inf = float(np.max(np.abs(grad[active]))) if active.any() else 0.0
        history.append(
            BilevelIterate(
                theta=theta.values.copy(),
                objective=float(objective),
                grad_inf=grad_inf,
                inner_iterations=result.iterations,
                inner_converged=True,
            )
        )
        if initial_objective is None:
            initial_objective = objective
        if grad_inf < grad_tol:
            stop = "grad_tol"
            break
        if objective > divergence_factor * initial_objective:
            stop = "diverged"
            break
        theta = theta.with_values(theta.clip(theta.values - rates * grad))
        warm = result.trajectory.controls

    return BilevelRun(history=history, theta=theta, stop=stop)
