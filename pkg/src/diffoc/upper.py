"""Upper-level objectives for the bi-level problems.

An upper-level cost scores a solved trajectory (and the parameters directly);
the sensitivity pass only ever needs its value and first derivatives.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .core import ParamVector, Trajectory


@dataclass(frozen=True)
class UpperLevelGradients:
    """First derivatives of an upper-level cost along a trajectory."""

    x: np.ndarray      # (T, n_x)
    u: np.ndarray      # (T-1, n_u)
    theta: np.ndarray  # (n_p,) explicit partial


class UpperLevelCost(abc.ABC):
    @abc.abstractmethod
    def value(self, traj: Trajectory, theta: ParamVector) -> float:
        ...

    @abc.abstractmethod
    def gradients(self, traj: Trajectory, theta: ParamVector) -> UpperLevelGradients:
        ...


def _smooth_norm(residual: np.ndarray, smoothing: float) -> tuple[float, np.ndarray]:
    """2-norm with a floor inside the square root; gradient is 0 at zero residual."""
    r = float(np.sqrt(residual @ residual + smoothing * smoothing))
    return r, residual / r


class ControlImitationCost(UpperLevelCost):
    """Sum over knots of the 2-norm control mismatch against target controls.

    The norm is smoothed as sqrt(|du|^2 + smoothing^2), which keeps the
    gradient defined (and zero) when the controls coincide with the targets.
    """

    def __init__(self, targets: np.ndarray, smoothing: float = 1e-9):
        self.targets = np.asarray(targets, dtype=float)
        self.smoothing = float(smoothing)

    def value(self, traj, theta):
        total = 0.0
        for t in range(traj.horizon - 1):
            n, _ = _smooth_norm(traj.controls[t] - self.targets[t], self.smoothing)
            total += n
        return total

    def gradients(self, traj, theta):
        gx = np.zeros_like(traj.states)
        gu = np.zeros_like(traj.controls)
        for t in range(traj.horizon - 1):
            _, gu[t] = _smooth_norm(traj.controls[t] - self.targets[t], self.smoothing)
        return UpperLevelGradients(x=gx, u=gu, theta=np.zeros(len(theta)))


class QuadraticImitationCost(UpperLevelCost):
    """Mean squared control mismatch against target controls.

    Smooth everywhere, so plain fixed-rate gradient descent settles on it;
    the outer-loop identification runs use this form.
    """

    def __init__(self, targets: np.ndarray):
        self.targets = np.asarray(targets, dtype=float)

    def value(self, traj, theta):
        diff = traj.controls - self.targets
        return float(np.sum(diff * diff)) / self.targets.shape[0]

    def gradients(self, traj, theta):
        gu = 2.0 * (traj.controls - self.targets) / self.targets.shape[0]
        return UpperLevelGradients(
            x=np.zeros_like(traj.states), u=gu, theta=np.zeros(len(theta))
        )


class VelocityImitationCost(UpperLevelCost):
    """Control imitation plus a quadratic joint-velocity cost on every knot."""

    def __init__(self, targets: np.ndarray, smoothing: float = 1e-9, velocity_weight: float = 1.0):
        self.imitation = ControlImitationCost(targets, smoothing)
        self.velocity_weight = float(velocity_weight)

    def value(self, traj, theta):
        n_q = traj.states.shape[1] // 2
        qd = traj.states[:, n_q:]
        return self.imitation.value(traj, theta) + self.velocity_weight * float(np.sum(qd * qd))

    def gradients(self, traj, theta):
        grads = self.imitation.gradients(traj, theta)
        n_q = traj.states.shape[1] // 2
        gx = grads.x.copy()
        gx[:, n_q:] += 2.0 * self.velocity_weight * traj.states[:, n_q:]
        return UpperLevelGradients(x=gx, u=grads.u, theta=grads.theta)


class CoDesignCost(UpperLevelCost):
    """Joint-velocity energy plus a reachability hinge on the link lengths.

    The hinge penalizes designs whose combined link length cannot cover the
    required distance: penalty * max(0, distance - sqrt(sum l_i^2))^2. The
    hinge is the only explicit theta dependence.
    """

    def __init__(
        self,
        distance: float,
        penalty: float = 1e3,
        length_names: tuple[str, ...] = ("l1", "l2"),
    ):
        self.distance = float(distance)
        self.penalty = float(penalty)
        self.length_names = tuple(length_names)

    def _hinge(self, theta: ParamVector) -> tuple[float, np.ndarray]:
        lengths = np.array([theta.get(name) for name in self.length_names])
        reach = float(np.sqrt(np.sum(lengths * lengths)))
        gap = self.distance - reach
        gtheta = np.zeros(len(theta))
        if gap <= 0.0:
            return 0.0, gtheta
        for name, l in zip(self.length_names, lengths):
            gtheta[theta.index(name)] = -2.0 * self.penalty * gap * l / reach
        return self.penalty * gap * gap, gtheta

    def value(self, traj, theta):
        n_q = traj.states.shape[1] // 2
        qd = traj.states[:, n_q:]
        hinge, _ = self._hinge(theta)
        return float(np.sum(qd * qd)) + hinge

    def gradients(self, traj, theta):
        n_q = traj.states.shape[1] // 2
        gx = np.zeros_like(traj.states)
        gx[:, n_q:] = 2.0 * traj.states[:, n_q:]
        _, gtheta = self._hinge(theta)
        return UpperLevelGradients(
            x=gx, u=np.zeros_like(traj.controls), theta=gtheta
        )
