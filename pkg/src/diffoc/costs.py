"""Running and terminal cost models with derivatives.

The terminal knot is treated as a running knot whose stage cost is the
terminal cost and whose control derivatives are zero, so tapes are uniform
over knots 0..T-1.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .core import ParamVector, Trajectory


@dataclass(frozen=True)
class CostExpansion:
    """Derivatives of one knot's cost at (x, u, theta)."""

    lx: np.ndarray        # (n_x,)
    lu: np.ndarray        # (n_u,)
    lxx: np.ndarray       # (n_x, n_x)
    lxu: np.ndarray       # (n_x, n_u)
    luu: np.ndarray       # (n_u, n_u)
    lxtheta: np.ndarray   # (n_x, n_p)
    lutheta: np.ndarray   # (n_u, n_p)


class CostModel(abc.ABC):
    """Stage costs for knots 0..T-2 plus a terminal cost at knot T-1."""

    @abc.abstractmethod
    def value(self, x, u, theta: ParamVector, knot: int, horizon: int) -> float:
        ...

    @abc.abstractmethod
    def expansion(self, x, u, theta: ParamVector, knot: int, horizon: int) -> CostExpansion:
        ...

    def trajectory_cost(self, traj: Trajectory, theta: ParamVector) -> float:
        T = traj.horizon
        total = 0.0
        for t in range(T - 1):
            total += self.value(traj.states[t], traj.controls[t], theta, t, T)
        total += self.value(traj.states[T - 1], traj.controls[0] * 0.0, theta, T - 1, T)
        return total

    def expansions_along(self, traj: Trajectory, theta: ParamVector) -> list[CostExpansion]:
        T = traj.horizon
        zero_u = traj.controls[0] * 0.0
        tape = [
            self.expansion(traj.states[t], traj.controls[t], theta, t, T)
            for t in range(T - 1)
        ]
        tape.append(self.expansion(traj.states[T - 1], zero_u, theta, T - 1, T))
        return tape


class QuadraticGoalCost(CostModel):
    """Control effort along the way, quadratic distance to a goal at the end.

    Running cost u^T R u with R = control_weight * I; terminal cost
    (x - goal)^T Qf (x - goal) with Qf = qf * I, qf read from the theta
    component named by ``weight_name``.
    """

    def __init__(self, goal, control_weight: float = 1e-2, weight_name: str = "qf"):
        self.goal = np.asarray(goal, dtype=float)
        self.control_weight = float(control_weight)
        self.weight_name = weight_name
        if not self.control_weight > 0:
            raise ValueError("control_weight must be positive")

    def value(self, x, u, theta, knot, horizon):
        if knot == horizon - 1:
            qf = theta.get(self.weight_name)
            err = np.asarray(x, dtype=float) - self.goal
            return float(qf * err @ err)
        u = np.asarray(u, dtype=float)
        return float(self.control_weight * u @ u)

    def expansion(self, x, u, theta, knot, horizon):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        n_x, n_u, n_p = x.size, u.size, len(theta)
        lx = np.zeros(n_x)
        lu = np.zeros(n_u)
        lxx = np.zeros((n_x, n_x))
        luu = np.zeros((n_u, n_u))
        lxtheta = np.zeros((n_x, n_p))
        if knot == horizon - 1:
            qf = theta.get(self.weight_name)
            err = x - self.goal
            lx = 2.0 * qf * err
            lxx = 2.0 * qf * np.eye(n_x)
            lxtheta[:, theta.index(self.weight_name)] = 2.0 * err
        else:
            lu = 2.0 * self.control_weight * u
            luu = 2.0 * self.control_weight * np.eye(n_u)
        return CostExpansion(
            lx=lx,
            lu=lu,
            lxx=lxx,
            lxu=np.zeros((n_x, n_u)),
            luu=luu,
            lxtheta=lxtheta,
            lutheta=np.zeros((n_u, n_p)),
        )
