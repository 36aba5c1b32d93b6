"""Exact parameter gradients of a converged solve via one auxiliary LQR.

The converged trajectory satisfies the first-order optimality system of the
control problem. Differentiating that system gives a linear equation
K d = g, where K is the optimality-system Jacobian (which carries the
second-order dynamics contractions; dropping them is the "ilqr"
derivative mode) and g stacks the upper-level cost gradients. The
differential terms d are obtained either by one Riccati sweep
(:func:`differential_lqr`) or by assembling and solving the system densely
(:func:`dense_kkt_oracle`, the in-repo cross-check). A chain rule then folds
d and the multipliers against the parameter derivatives of the dynamics and
costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NotConvergedError, ParamVector, tensor_contract_left
from .costs import CostModel
from .dynamics import DynamicsModel
from .solver import ProblemSpec, SolveResult, solve_problem
from .upper import UpperLevelCost, UpperLevelGradients


@dataclass(frozen=True)
class SensitivitySolution:
    """Differential terms of the optimality system and the multipliers.

    ``d_lambda[0]`` belongs to the initial-condition constraint; entries
    t >= 1 belong to the dynamics constraint producing state t.
    """

    d_x: np.ndarray        # (T, n_x)
    d_u: np.ndarray        # (T-1, n_u)
    d_lambda: np.ndarray   # (T, n_x)
    lambda_star: np.ndarray  # (T, n_x)


@dataclass(frozen=True)
class GradientResult:
    grad: np.ndarray   # (n_p,)
    method: str        # derivative mode that produced it
    diagnostics: dict[str, np.ndarray]


def _require_converged(result: SolveResult, what: str) -> None:
    if not result.converged:
        raise NotConvergedError(
            f"{what} requires a converged solve "
            f"(metric {result.conv_metric:.3e})"
        )


def multipliers(result: SolveResult) -> np.ndarray:
    """Constraint multipliers at the solution, one per knot.

    Backward recursion from the terminal cost gradient; at convergence this
    equals the value-gradient tape knot by knot.
    """
    _require_converged(result, "multiplier recursion")
    T = result.trajectory.horizon
    lam = np.empty((T, result.trajectory.states.shape[1]))
    lam[T - 1] = result.cost_tape[T - 1].lx
    for t in range(T - 2, -1, -1):
        lam[t] = result.cost_tape[t].lx + result.derivative_tape[t].fx.T @ lam[t + 1]
    return lam


def _hessian_blocks(result: SolveResult, lam: np.ndarray, derivative_mode: str):
    """Per-knot Lagrangian Hessian blocks (Lxx, Lxu, Luu) for running knots."""
    if derivative_mode not in ("ddp", "ilqr"):
        raise ValueError(f"derivative_mode must be 'ddp' or 'ilqr', got {derivative_mode!r}")
    blocks = []
    T = result.trajectory.horizon
    for t in range(T - 1):
        c = result.cost_tape[t]
        lxx, lxu, luu = c.lxx, c.lxu, c.luu
        if derivative_mode == "ddp":
            d = result.derivative_tape[t]
            lxx = lxx + tensor_contract_left(lam[t + 1], d.fxx)
            lxu = lxu + tensor_contract_left(lam[t + 1], d.fxu)
            luu = luu + tensor_contract_left(lam[t + 1], d.fuu)
        blocks.append((lxx, lxu, luu))
    return blocks


def differential_lqr(
    result: SolveResult,
    ul_grads: UpperLevelGradients,
    derivative_mode: str = "ddp",
) -> SensitivitySolution:
    """Solve the differential optimality system by one Riccati sweep.

    The quadratic blocks are the Lagrangian Hessians at the solution (with
    the dynamics-tensor contractions included iff derivative_mode="ddp"); the
    linear terms are the upper-level gradients. No regularization is applied:
    a non-PD block signals a defective input and raises.
    """
    _require_converged(result, "differential LQR")
    lam = multipliers(result)
    blocks = _hessian_blocks(result, lam, derivative_mode)
    T = result.trajectory.horizon
    n_x = result.trajectory.states.shape[1]
    n_u = result.trajectory.controls.shape[1]

    gx = np.asarray(ul_grads.x, dtype=float)
    gu = np.asarray(ul_grads.u, dtype=float)

    # Backward sweep: quadratic value d_x' P d_x / 2 + p' d_x of the
    # differential problem min 1/2 d' H d - g' d subject to the linearized
    # dynamics with d_x[0] = 0.
    P = result.cost_tape[T - 1].lxx.copy()
    p = -gx[T - 1].copy()
    P_tape = np.empty((T, n_x, n_x))
    p_tape = np.empty((T, n_x))
    P_tape[T - 1] = P
    p_tape[T - 1] = p
    kff = np.empty((T - 1, n_u))
    Kfb = np.empty((T - 1, n_u, n_x))

    for t in range(T - 2, -1, -1):
        fx = result.derivative_tape[t].fx
        fu = result.derivative_tape[t].fu
        lxx, lxu, luu = blocks[t]
        qxx = lxx + fx.T @ P @ fx
        qux = lxu.T + fu.T @ P @ fx
        quu = luu + fu.T @ P @ fu
        qx = -gx[t] + fx.T @ p
        qu = -gu[t] + fu.T @ p
        try:
            np.linalg.cholesky(quu)
        except np.linalg.LinAlgError:
            raise NotConvergedError(
                f"auxiliary control Hessian is not positive definite at knot {t}; "
                "the solve did not reach a strict minimum"
            ) from None
        kff[t] = -np.linalg.solve(quu, qu)
        Kfb[t] = -np.linalg.solve(quu, qux)
        P = qxx + qux.T @ Kfb[t]
        P = 0.5 * (P + P.T)
        p = qx + qux.T @ kff[t]
        P_tape[t] = P
        p_tape[t] = p

    d_x = np.zeros((T, n_x))
    d_u = np.zeros((T - 1, n_u))
    d_lam = np.zeros((T, n_x))
    for t in range(T - 1):
        d_u[t] = kff[t] + Kfb[t] @ d_x[t]
        fx = result.derivative_tape[t].fx
        fu = result.derivative_tape[t].fu
        d_x[t + 1] = fx @ d_x[t] + fu @ d_u[t]
    for t in range(1, T):
        d_lam[t] = P_tape[t] @ d_x[t] + p_tape[t]
    d_lam[0] = -p_tape[0]

    return SensitivitySolution(d_x=d_x, d_u=d_u, d_lambda=d_lam, lambda_star=lam)


def dense_kkt_oracle(
    result: SolveResult,
    ul_grads: UpperLevelGradients,
    derivative_mode: str = "ddp",
) -> SensitivitySolution:
    """Assemble the differential optimality system densely and solve it.

    Brute-force cross-check for :func:`differential_lqr`; quadratic in the
    horizon, intended for small T.
    """
    _require_converged(result, "dense KKT solve")
    lam = multipliers(result)
    blocks = _hessian_blocks(result, lam, derivative_mode)
    T = result.trajectory.horizon
    n_x = result.trajectory.states.shape[1]
    n_u = result.trajectory.controls.shape[1]

    nz = T * n_x + (T - 1) * n_u + T * n_x
    x_of = lambda t: t * n_x
    u_of = lambda t: T * n_x + t * n_u
    l_of = lambda t: T * n_x + (T - 1) * n_u + t * n_x

    K = np.zeros((nz, nz))
    rhs = np.zeros(nz)

    for t in range(T - 1):
        lxx, lxu, luu = blocks[t]
        fx = result.derivative_tape[t].fx
        fu = result.derivative_tape[t].fu
        xs, us = slice(x_of(t), x_of(t) + n_x), slice(u_of(t), u_of(t) + n_u)
        K[xs, xs] += lxx
        K[xs, us] += lxu
        K[us, xs] += lxu.T
        K[us, us] += luu
        # dynamics constraint producing state t+1, multiplier index t+1
        ls1 = slice(l_of(t + 1), l_of(t + 1) + n_x)
        xs1 = slice(x_of(t + 1), x_of(t + 1) + n_x)
        K[xs, ls1] += fx.T
        K[us, ls1] += fu.T
        K[ls1, xs] += fx
        K[ls1, us] += fu
        K[ls1, xs1] -= np.eye(n_x)
        K[xs1, ls1] -= np.eye(n_x)
        rhs[xs] = ul_grads.x[t]
        rhs[us] = ul_grads.u[t]
    # terminal stage cost Hessian and the initial-condition constraint
    xs_T = slice(x_of(T - 1), x_of(T - 1) + n_x)
    K[xs_T, xs_T] += result.cost_tape[T - 1].lxx
    rhs[xs_T] = ul_grads.x[T - 1]
    xs0, ls0 = slice(0, n_x), slice(l_of(0), l_of(0) + n_x)
    K[xs0, ls0] += np.eye(n_x)
    K[ls0, xs0] += np.eye(n_x)

    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        raise NotConvergedError(
            "dense optimality system is singular; the solve is degenerate or stale"
        ) from None

    d_x = sol[: T * n_x].reshape(T, n_x)
    d_u = sol[T * n_x : T * n_x + (T - 1) * n_u].reshape(T - 1, n_u)
    d_lam = sol[T * n_x + (T - 1) * n_u :].reshape(T, n_x)
    return SensitivitySolution(d_x=d_x, d_u=d_u, d_lambda=d_lam, lambda_star=lam)


def parameter_gradient(
    result: SolveResult,
    ul_grads: UpperLevelGradients,
    sens: SensitivitySolution,
    method: str = "ddp",
) -> GradientResult:
    """Fold the differential terms against the parameter derivatives.

    Requires a full-order derivative tape (theta blocks present). Per
    parameter component, three families of products accumulate over knots:
    the multiplier against the mixed parameter derivatives of the dynamics
    Jacobians, the differential multiplier against the direct parameter
    derivative of the dynamics, and the differential trajectory against the
    mixed parameter derivatives of the costs. Only the partial parameter
    derivatives at the fixed solution enter; propagating the state motion
    into the Jacobian terms double-counts what the differential system
    already accounts for and measurably breaks agreement with the
    finite-difference reference.
    """
    T = result.trajectory.horizon
    n_p = len(result.theta)
    tape = result.derivative_tape
    ctape = result.cost_tape
    for block in ("ftheta", "fxtheta", "futheta"):
        tape[0].require(block)

    grad = np.array(ul_grads.theta, dtype=float)
    dyn_jacobian = np.zeros((n_p, T))
    dyn_offset = np.zeros((n_p, T))
    cost_mixed = np.zeros((n_p, T))

    for i in range(n_p):
        for t in range(T - 1):
            d = tape[t]
            lam_next = sens.lambda_star[t + 1]
            term_jac = lam_next @ (
                d.fxtheta[:, :, i] @ sens.d_x[t] + d.futheta[:, :, i] @ sens.d_u[t]
            )
            term_off = sens.d_lambda[t + 1] @ d.ftheta[:, i]
            term_cost = (
                sens.d_x[t] @ ctape[t].lxtheta[:, i] + sens.d_u[t] @ ctape[t].lutheta[:, i]
            )
            dyn_jacobian[i, t] = term_jac
            dyn_offset[i, t] = term_off
            cost_mixed[i, t] = term_cost
            grad[i] -= term_jac + term_off + term_cost
        term_cost = sens.d_x[T - 1] @ ctape[T - 1].lxtheta[:, i]
        cost_mixed[i, T - 1] = term_cost
        grad[i] -= term_cost

    return GradientResult(
        grad=grad,
        method=method,
        diagnostics={
            "dyn_jacobian": dyn_jacobian,
            "dyn_offset": dyn_offset,
            "cost_mixed": cost_mixed,
        },
    )


def gradient_from_solution(
    result: SolveResult,
    ul_cost: UpperLevelCost,
    derivative_mode: str = "ddp",
) -> GradientResult:
    """Gradient of an upper-level cost from an existing converged solve."""
    _require_converged(result, "sensitivity pass")
    ul_grads = ul_cost.gradients(result.trajectory, result.theta)
    sens = differential_lqr(result, ul_grads, derivative_mode)
    return parameter_gradient(result, ul_grads, sens, method=derivative_mode)


def differentiate(
    model: DynamicsModel,
    cost: CostModel,
    ul_cost: UpperLevelCost,
    theta: ParamVector,
    problem: ProblemSpec,
    derivative_mode: str = "ddp",
    initial_controls: np.ndarray | None = None,
) -> GradientResult:
    """Solve the control problem at theta and differentiate the upper cost.

    Refuses to differentiate when the inner solve does not converge: the
    differential system is only valid on the optimality manifold.
    """
    result = solve_problem(
        model, cost, theta, problem, initial_controls=initial_controls, tape_order="full"
    )
    return gradient_from_solution(result, ul_cost, derivative_mode)
