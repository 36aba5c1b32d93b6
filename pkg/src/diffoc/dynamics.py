"""Discrete-time dynamics models with derivatives of the step map.

Physical models advance the state with one explicit Euler step,

    x' = [q + dt * qdot, qdot + dt * qddot(q, qdot, u, theta)],

so every derivative of the discrete map is an affine function of the
derivatives of the acceleration map. The pendulum ships closed-form
derivatives; the double pendulum obtains them by evaluating its acceleration
map in forward-mode Taylor arithmetic. ``fd_derivatives`` provides a central
finite-difference fallback used as the in-repo oracle for both.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from . import taylor
from .core import DynamicsError, ParamVector
from .taylor import Taylor


@dataclass
class DerivativeBundle:
    """Derivatives of the discrete step at one (x, u, theta) point.

    Second-order blocks are ordered (output, first argument, second argument).
    Parameter blocks span the full theta vector, with zero columns for
    components the model does not read; they are None unless the bundle was
    evaluated with order="full".
    """

    fx: np.ndarray                  # (n_x, n_x)
    fu: np.ndarray                  # (n_x, n_u)
    fxx: np.ndarray                 # (n_x, n_x, n_x)
    fxu: np.ndarray                 # (n_x, n_x, n_u)
    fuu: np.ndarray                 # (n_x, n_u, n_u)
    ftheta: np.ndarray | None = None    # (n_x, n_p)
    fxtheta: np.ndarray | None = None   # (n_x, n_x, n_p)
    futheta: np.ndarray | None = None   # (n_x, n_u, n_p)
    order: str = "second"

    def require(self, block: str) -> np.ndarray:
        value = getattr(self, block)
        if value is None:
            raise ValueError(
                f"derivative block {block!r} missing: bundle has order={self.order!r}"
            )
        return value


_ORDERS = ("first", "second", "full")


def _check_order(order: str) -> None:
    if order not in _ORDERS:
        raise ValueError(f"order must be one of {_ORDERS}, got {order!r}")


class DynamicsModel(abc.ABC):
    """Deterministic discrete-time dynamics x' = f(x, u; theta)."""

    n_x: int
    n_u: int
    param_names: tuple[str, ...] = ()

    @abc.abstractmethod
    def step(self, x: np.ndarray, u: np.ndarray, theta: ParamVector, dt: float) -> np.ndarray:
        """Advance one timestep; raises DynamicsError on non-finite output."""

    @abc.abstractmethod
    def derivatives_along(
        self,
        states: np.ndarray,
        controls: np.ndarray,
        theta: ParamVector,
        dt: float,
        order: str = "second",
    ) -> list[DerivativeBundle]:
        """Derivative bundles of the step map at each (states[i], controls[i])."""

    def derivatives(self, x, u, theta, dt, order: str = "second") -> DerivativeBundle:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.derivatives_along(x[None, :], u[None, :], theta, dt, order)[0]


def _euler_bundles(
    accel: np.ndarray,
    d1: np.ndarray,
    d2: np.ndarray | None,
    dt: float,
    n_u: int,
    theta: ParamVector,
    param_names: tuple[str, ...],
    order: str,
) -> list[DerivativeBundle]:
    """Map batched acceleration derivatives to bundles of the Euler step.

    ``d1``/``d2`` are derivatives of qddot with respect to the stacked
    argument z = [x, u, model params], shapes (B, n_q, n_z) and
    (B, n_q, n_z, n_z).
    """
    B, n_q = accel.shape
    n_x = 2 * n_q
    n_p = len(theta)
    cols = [theta.index(name) for name in param_names]

    fx = np.zeros((B, n_x, n_x))
    idx = np.arange(n_x)
    fx[:, idx, idx] = 1.0
    fx[:, np.arange(n_q), n_q + np.arange(n_q)] += dt
    fx[:, n_q:, :] += dt * d1[:, :, :n_x]

    fu = np.zeros((B, n_x, n_u))
    fu[:, n_q:, :] = dt * d1[:, :, n_x:n_x + n_u]

    fxx = np.zeros((B, n_x, n_x, n_x))
    fxu = np.zeros((B, n_x, n_x, n_u))
    fuu = np.zeros((B, n_x, n_u, n_u))
    if order in ("second", "full"):
        fxx[:, n_q:] = dt * d2[:, :, :n_x, :n_x]
        fxu[:, n_q:] = dt * d2[:, :, :n_x, n_x:n_x + n_u]
        fuu[:, n_q:] = dt * d2[:, :, n_x:n_x + n_u, n_x:n_x + n_u]

    ftheta = fxtheta = futheta = None
    if order == "full":
        ftheta = np.zeros((B, n_x, n_p))
        fxtheta = np.zeros((B, n_x, n_x, n_p))
        futheta = np.zeros((B, n_x, n_u, n_p))
        for local, col in enumerate(cols):
            z = n_x + n_u + local
            ftheta[:, n_q:, col] = dt * d1[:, :, z]
            fxtheta[:, n_q:, :, col] = dt * d2[:, :, :n_x, z]
            futheta[:, n_q:, :, col] = dt * d2[:, :, n_x:n_x + n_u, z]

    out = []
    for i in range(B):
        out.append(
            DerivativeBundle(
                fx=fx[i],
                fu=fu[i],
                fxx=fxx[i],
                fxu=fxu[i],
                fuu=fuu[i],
                ftheta=None if ftheta is None else ftheta[i],
                fxtheta=None if fxtheta is None else fxtheta[i],
                futheta=None if futheta is None else futheta[i],
                order=order,
            )
        )
    return out


class ArticulatedModel(DynamicsModel):
    """Base for models defined by a continuous acceleration map."""

    @abc.abstractmethod
    def accel(self, x: np.ndarray, u: np.ndarray, theta: ParamVector) -> np.ndarray:
        """Generalized accelerations; accepts batched (B, n) arguments."""

    @abc.abstractmethod
    def energy(self, x: np.ndarray, theta: ParamVector) -> float:
        """Total mechanical energy at state x (used by conservation checks)."""

    def step(self, x, u, theta, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        n_q = self.n_x // 2
        qdd = self.accel(x, u, theta)
        out = np.concatenate([x[..., :n_q] + dt * x[..., n_q:], x[..., n_q:] + dt * qdd], axis=-1)
        if not np.all(np.isfinite(out)):
            raise DynamicsError(f"non-finite state after step from x={x}, u={u}")
        return out


class Pendulum(ArticulatedModel):
    """Point-mass pendulum on a massless rod of parameterized length.

    State is [angle, angular velocity] with angle 0 hanging down; the single
    control is the joint torque. The rod length is read from the theta
    component named by ``length_name``.
    """

    n_x = 2
    n_u = 1

    def __init__(self, mass: float = 1.0, gravity: float = 9.81, length_name: str = "rho"):
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.length_name = length_name
        self.param_names = (length_name,)

    def accel(self, x, u, theta):
        rho = theta.get(self.length_name)
        q = np.asarray(x, dtype=float)[..., 0]
        torque = np.asarray(u, dtype=float)[..., 0]
        qdd = (torque - self.mass * self.gravity * rho * np.sin(q)) / (self.mass * rho * rho)
        return qdd[..., None]

    def energy(self, x, theta):
        rho = theta.get(self.length_name)
        q, w = float(x[0]), float(x[1])
        kinetic = 0.5 * self.mass * rho * rho * w * w
        potential = -self.mass * self.gravity * rho * np.cos(q)
        return kinetic + potential

    def derivatives_along(self, states, controls, theta, dt, order="second"):
        _check_order(order)
        rho = theta.get(self.length_name)
        m, g = self.mass, self.gravity
        q = np.asarray(states, dtype=float)[:, 0]
        u = np.asarray(controls, dtype=float)[:, 0]
        B = q.shape[0]
        sin_q, cos_q = np.sin(q), np.cos(q)

        # z = [q, qdot, u, rho]; qdd = (u - m g rho sin q) / (m rho^2)
        d1 = np.zeros((B, 1, 4))
        d1[:, 0, 0] = -(g / rho) * cos_q
        d1[:, 0, 2] = 1.0 / (m * rho * rho)
        d1[:, 0, 3] = -2.0 * u / (m * rho**3) + (g / (rho * rho)) * sin_q

        d2 = np.zeros((B, 1, 4, 4))
        d2[:, 0, 0, 0] = (g / rho) * sin_q
        d2[:, 0, 0, 3] = d2[:, 0, 3, 0] = (g / (rho * rho)) * cos_q
        d2[:, 0, 2, 3] = d2[:, 0, 3, 2] = -2.0 / (m * rho**3)
        d2[:, 0, 3, 3] = 6.0 * u / (m * rho**4) - 2.0 * g * sin_q / rho**3

        qdd = ((u - m * g * rho * sin_q) / (m * rho * rho))[:, None]
        return _euler_bundles(qdd, d1, d2, dt, self.n_u, theta, self.param_names, order)


class DoublePendulum(ArticulatedModel):
    """Two-link pendulum with a point mass at the end of each link.

    Relative joint angles, both measured so the straight-up configuration is
    [pi, 0]; both joints are torque-actuated. Link lengths come from the
    theta components named by ``length_names``.
    """

    n_x = 4
    n_u = 2

    def __init__(
        self,
        mass_1: float = 1.0,
        mass_2: float = 1.0,
        gravity: float = 9.81,
        length_names: tuple[str, str] = ("l1", "l2"),
    ):
        self.mass_1 = float(mass_1)
        self.mass_2 = float(mass_2)
        self.gravity = float(gravity)
        self.length_names = tuple(length_names)
        self.param_names = self.length_names

    def _acceleration(self, q1, q2, w1, w2, u1, u2, l1, l2):
        # Manipulator equations M(q) qdd + c(q, qd) + g(q) = u for two point
        # masses; operands may be plain arrays or Taylor values.
        m1, m2, g = self.mass_1, self.mass_2, self.gravity
        s1 = taylor.sin(q1)
        s2 = taylor.sin(q2)
        c2 = taylor.cos(q2)
        s12 = taylor.sin(q1 + q2)
        l1l2 = l1 * l2
        m11 = (m1 + m2) * (l1 * l1) + m2 * (l2 * l2) + 2.0 * m2 * (l1l2 * c2)
        m12 = m2 * (l2 * l2) + m2 * (l1l2 * c2)
        m22 = m2 * (l2 * l2)
        bias1 = (
            -m2 * (l1l2 * s2) * (2.0 * (w1 * w2) + w2 * w2)
            + (m1 + m2) * g * (l1 * s1)
            + m2 * g * (l2 * s12)
        )
        bias2 = m2 * (l1l2 * s2) * (w1 * w1) + m2 * g * (l2 * s12)
        r1 = u1 - bias1
        r2 = u2 - bias2
        det = m11 * m22 - m12 * m12
        a1 = (m22 * r1 - m12 * r2) / det
        a2 = (m11 * r2 - m12 * r1) / det
        return a1, a2

    def mass_matrix(self, q, theta) -> np.ndarray:
        l1 = theta.get(self.length_names[0])
        l2 = theta.get(self.length_names[1])
        m1, m2 = self.mass_1, self.mass_2
        c2 = np.cos(q[1])
        m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2
        m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2
        return np.array([[m11, m12], [m12, m2 * l2 * l2]])

    def accel(self, x, u, theta):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        l1 = theta.get(self.length_names[0])
        l2 = theta.get(self.length_names[1])
        a1, a2 = self._acceleration(
            x[..., 0], x[..., 1], x[..., 2], x[..., 3], u[..., 0], u[..., 1], l1, l2
        )
        return np.stack([a1, a2], axis=-1)

    def energy(self, x, theta):
        l1 = theta.get(self.length_names[0])
        l2 = theta.get(self.length_names[1])
        m1, m2, g = self.mass_1, self.mass_2, self.gravity
        q = np.asarray(x[:2], dtype=float)
        qd = np.asarray(x[2:], dtype=float)
        kinetic = 0.5 * qd @ self.mass_matrix(q, theta) @ qd
        potential = -(m1 + m2) * g * l1 * np.cos(q[0]) - m2 * g * l2 * np.cos(q[0] + q[1])
        return float(kinetic + potential)

    def derivatives_along(self, states, controls, theta, dt, order="second"):
        _check_order(order)
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        l1_val = theta.get(self.length_names[0])
        l2_val = theta.get(self.length_names[1])

        second = order in ("second", "full")
        n_dirs = 8 if order == "full" else 6
        seeds = [
            Taylor.seed(states[:, i], i, n_dirs, second) for i in range(4)
        ] + [
            Taylor.seed(controls[:, i], 4 + i, n_dirs, second) for i in range(2)
        ]
        if order == "full":
            l1 = Taylor.seed(np.full(states.shape[0], l1_val), 6, n_dirs, second)
            l2 = Taylor.seed(np.full(states.shape[0], l2_val), 7, n_dirs, second)
        else:
            l1, l2 = l1_val, l2_val

        a1, a2 = self._acceleration(*seeds, l1, l2)
        accel = np.stack([a1.val, a2.val], axis=1)
        d1 = np.stack([a1.grad, a2.grad], axis=1)
        d2 = np.stack([a1.hess, a2.hess], axis=1) if second else None
        return _euler_bundles(accel, d1, d2, dt, self.n_u, theta, self.param_names, order)


class LinearDynamics(DynamicsModel):
    """Linear test model x' = A x + B u; the step ignores dt and theta."""

    param_names: tuple[str, ...] = ()

    def __init__(self, A: np.ndarray, B: np.ndarray):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError(f"B must be {A.shape[0]} x n_u, got shape {B.shape}")
        self.A = A
        self.B = B
        self.n_x = A.shape[0]
        self.n_u = B.shape[1]

    def step(self, x, u, theta, dt):
        out = self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)
        if not np.all(np.isfinite(out)):
            raise DynamicsError(f"non-finite state after linear step from x={x}, u={u}")
        return out

    def derivatives_along(self, states, controls, theta, dt, order="second"):
        _check_order(order)
        B = np.asarray(states).shape[0]
        n_p = len(theta)
        out = []
        for _ in range(B):
            full = order == "full"
            out.append(
                DerivativeBundle(
                    fx=self.A.copy(),
                    fu=self.B.copy(),
                    fxx=np.zeros((self.n_x, self.n_x, self.n_x)),
                    fxu=np.zeros((self.n_x, self.n_x, self.n_u)),
                    fuu=np.zeros((self.n_x, self.n_u, self.n_u)),
                    ftheta=np.zeros((self.n_x, n_p)) if full else None,
                    fxtheta=np.zeros((self.n_x, self.n_x, n_p)) if full else None,
                    futheta=np.zeros((self.n_x, self.n_u, n_p)) if full else None,
                    order=order,
                )
            )
        return out


def fd_derivatives(
    model: DynamicsModel,
    x: np.ndarray,
    u: np.ndarray,
    theta: ParamVector,
    dt: float,
    h_first: float = 1e-6,
    h_second: float = 1e-4,
) -> DerivativeBundle:
    """Full derivative bundle by central differences of ``model.step``.

    Test oracle for the analytic bundles; second-order blocks are explicitly
    symmetrized in their trailing indices.
    """
    if not (h_first > 0 and h_second > 0):
        raise ValueError("finite-difference steps must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n_x, n_u, n_p = model.n_x, model.n_u, len(theta)

    def step_at(dx, du, dth):
        th = theta if dth is None else theta.with_values(theta.values + dth, relax_bounds=True)
        return model.step(x + dx, u + du, th, dt)

    def probe(i, kind, h):
        dx = np.zeros(n_x)
        du = np.zeros(n_u)
        dth = np.zeros(n_p)
        if kind == "x":
            dx[i] = h
        elif kind == "u":
            du[i] = h
        else:
            dth[i] = h
        return dx, du, dth

    def first(kind, n):
        out = np.zeros((n_x, n))
        for i in range(n):
            dx, du, dth = probe(i, kind, h_first)
            out[:, i] = (step_at(dx, du, dth) - step_at(-dx, -du, -dth)) / (2 * h_first)
        return out

    def second(kind_a, n_a, kind_b, n_b):
        out = np.zeros((n_x, n_a, n_b))
        f0 = step_at(np.zeros(n_x), np.zeros(n_u), None)
        for a in range(n_a):
            da = probe(a, kind_a, h_second)
            for b in range(n_b):
                db = probe(b, kind_b, h_second)
                if kind_a == kind_b and a == b:
                    plus = step_at(*da)
                    minus = step_at(*[-p for p in da])
                    out[:, a, b] = (plus - 2 * f0 + minus) / (h_second * h_second)
                else:
                    pp = step_at(*[p + q for p, q in zip(da, db)])
                    pm = step_at(*[p - q for p, q in zip(da, db)])
                    mp = step_at(*[-p + q for p, q in zip(da, db)])
                    mm = step_at(*[-p - q for p, q in zip(da, db)])
                    out[:, a, b] = (pp - pm - mp + mm) / (4 * h_second * h_second)
        return out

    fxx = second("x", n_x, "x", n_x)
    fuu = second("u", n_u, "u", n_u)
    fxx = 0.5 * (fxx + np.swapaxes(fxx, 1, 2))
    fuu = 0.5 * (fuu + np.swapaxes(fuu, 1, 2))
    return DerivativeBundle(
        fx=first("x", n_x),
        fu=first("u", n_u),
        fxx=fxx,
        fxu=second("x", n_x, "u", n_u),
        fuu=fuu,
        ftheta=first("p", n_p),
        fxtheta=second("x", n_x, "p", n_p),
        futheta=second("u", n_u, "p", n_p),
        order="full",
    )
