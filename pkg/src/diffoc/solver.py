"""DDP / iLQR trajectory optimization.

The backward pass builds quadratic expansions of the action-value function
along the reference trajectory; "ddp" mode keeps the contractions of the
second-order dynamics tensors against the next value gradient, "ilqr" mode
drops them. The forward pass always rolls out the full nonlinear dynamics, so
accepted trajectories carry no dynamics gaps. After convergence the tapes are
rebuilt at the solution without regularization; the sensitivity pass consumes
those.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import DynamicsError, ParamVector, SolverError, Trajectory, tensor_contract_left
from .costs import CostExpansion, CostModel
from .dynamics import DerivativeBundle, DynamicsModel


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    tol: float = 1e-12                # threshold on sum_t Qu' Quu^-1 Qu
    reg_init: float = 0.0
    reg_bump: float = 1e-6            # value regularization jumps to on first rejection
    reg_grow: float = 10.0
    reg_decay: float = 0.5
    reg_floor: float = 1e-12          # below this, regularization snaps back to zero
    reg_max: float = 1e6
    alphas: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)
    tape_order: str = "second"        # derivative order kept in the result tape
    polish_steps: int = 2             # full Newton steps accepted on metric decrease


@dataclass(frozen=True)
class ProblemSpec:
    """Fixed data of one optimal-control problem instance."""

    x0: np.ndarray
    horizon: int
    dt: float
    mode: str = "ilqr"
    options: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class QExpansion:
    qx: np.ndarray
    qu: np.ndarray
    qxx: np.ndarray
    quu: np.ndarray
    qux: np.ndarray


@dataclass
class ValueExpansion:
    vx: np.ndarray
    vxx: np.ndarray


@dataclass
class GainSchedule:
    k: np.ndarray  # (T-1, n_u) feed-forward
    K: np.ndarray  # (T-1, n_u, n_x) feedback


@dataclass
class BackwardPassData:
    q_tape: list[QExpansion]
    value_tape: list[ValueExpansion]
    gains: GainSchedule
    metric: float


@dataclass
class SolveResult:
    trajectory: Trajectory
    theta: ParamVector
    mode: str
    q_tape: list[QExpansion]
    value_tape: list[ValueExpansion]
    gains: GainSchedule
    derivative_tape: list[DerivativeBundle]
    cost_tape: list[CostExpansion]
    converged: bool
    conv_metric: float
    iterations: int
    cost_history: list[float]  # total cost at start and after each accepted step


def _modes(mode: str) -> None:
    if mode not in ("ddp", "ilqr"):
        raise ValueError(f"mode must be 'ddp' or 'ilqr', got {mode!r}")


def rollout(
    model: DynamicsModel,
    theta: ParamVector,
    x0: np.ndarray,
    controls: np.ndarray,
    dt: float,
) -> Trajectory:
    """Integrate the controls from x0; raises DynamicsError with the knot."""
    controls = np.asarray(controls, dtype=float)
    T = controls.shape[0] + 1
    states = np.empty((T, model.n_x))
    states[0] = np.asarray(x0, dtype=float)
    for t in range(T - 1):
        try:
            states[t + 1] = model.step(states[t], controls[t], theta, dt)
        except DynamicsError as err:
            raise DynamicsError(str(err), knot=t) from None
    return Trajectory(states=states, controls=controls, dt=dt)


def forward_pass(
    model: DynamicsModel,
    theta: ParamVector,
    traj_ref: Trajectory,
    gains: GainSchedule,
    alpha: float,
) -> Trajectory:
    """Roll out the nonlinear dynamics under the scaled policy update."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    T = traj_ref.horizon
    states = np.empty_like(traj_ref.states)
    controls = np.empty_like(traj_ref.controls)
    states[0] = traj_ref.states[0]
    for t in range(T - 1):
        controls[t] = (
            traj_ref.controls[t]
            - alpha * gains.k[t]
            - gains.K[t] @ (states[t] - traj_ref.states[t])
        )
        try:
            states[t + 1] = model.step(states[t], controls[t], theta, traj_ref.dt)
        except DynamicsError as err:
            raise DynamicsError(str(err), knot=t) from None
    return Trajectory(states=states, controls=controls, dt=traj_ref.dt)


def backward_pass(
    derivative_tape: list[DerivativeBundle],
    cost_tape: list[CostExpansion],
    mode: str,
    reg: float,
) -> BackwardPassData | None:
    """One backward sweep; returns None when a regularized Quu is not PD."""
    _modes(mode)
    T = len(cost_tape)
    n_x = cost_tape[-1].lx.size
    n_u = cost_tape[0].lu.size

    terminal = cost_tape[T - 1]
    vx = terminal.lx.copy()
    vxx = terminal.lxx.copy()
    value_tape: list[ValueExpansion] = [ValueExpansion(vx=vx, vxx=vxx)]
    q_tape: list[QExpansion] = []
    k = np.empty((T - 1, n_u))
    K = np.empty((T - 1, n_u, n_x))
    metric = 0.0

    for t in range(T - 2, -1, -1):
        d = derivative_tape[t]
        c = cost_tape[t]
        qx = c.lx + d.fx.T @ vx
        qu = c.lu + d.fu.T @ vx
        qxx = c.lxx + d.fx.T @ vxx @ d.fx
        qux = c.lxu.T + d.fu.T @ vxx @ d.fx
        quu = c.luu + d.fu.T @ vxx @ d.fu
        if mode == "ddp":
            qxx = qxx + tensor_contract_left(vx, d.fxx)
            qux = qux + tensor_contract_left(vx, d.fxu).T
            quu = quu + tensor_contract_left(vx, d.fuu)

        quu_reg = quu + reg * np.eye(n_u)
        try:
            np.linalg.cholesky(quu_reg)
        except np.linalg.LinAlgError:
            return None
        k[t] = np.linalg.solve(quu_reg, qu)
        K[t] = np.linalg.solve(quu_reg, qux)
        metric += float(qu @ k[t])

        vx = qx - qux.T @ k[t]
        vxx = qxx - qux.T @ K[t]
        vxx = 0.5 * (vxx + vxx.T)
        q_tape.append(QExpansion(qx=qx, qu=qu, qxx=qxx, quu=quu, qux=qux))
        value_tape.append(ValueExpansion(vx=vx, vxx=vxx))

    q_tape.reverse()
    value_tape.reverse()
    return BackwardPassData(
        q_tape=q_tape,
        value_tape=value_tape,
        gains=GainSchedule(k=k, K=K),
        metric=metric,
    )


def _grow_reg(reg: float, options: SolverOptions) -> float:
    new = options.reg_bump if reg == 0.0 else reg * options.reg_grow
    if new > options.reg_max:
        raise SolverError(
            f"backward pass kept rejecting: regularization {new:g} exceeds "
            f"limit {options.reg_max:g}"
        )
    return new


def _decay_reg(reg: float, options: SolverOptions) -> float:
    new = reg * options.reg_decay
    return 0.0 if new < options.reg_floor else new


def solve(
    model: DynamicsModel,
    cost: CostModel,
    theta: ParamVector,
    x0: np.ndarray,
    horizon: int,
    dt: float,
    mode: str = "ddp",
    options: SolverOptions | None = None,
    initial_controls: np.ndarray | None = None,
) -> SolveResult:
    """Run DDP/iLQR to a stationary trajectory.

    Args:
        model, cost, theta: problem data.
        x0: initial state (fixed).
        horizon: number of knots T (T-1 controls).
        dt: timestep.
        mode: "ddp" keeps second-order dynamics terms in the backward pass,
            "ilqr" drops them; both converge to the same stationary points.
        options: solver settings; see SolverOptions.
        initial_controls: warm-start controls, defaults to zeros.

    Returns:
        SolveResult with the trajectory and the tapes rebuilt at the solution
        without regularization (the sensitivity pass requires those).
    """
    _modes(mode)
    options = options or SolverOptions()
    if horizon < 2:
        raise ValueError(f"horizon must be at least 2, got {horizon}")
    if initial_controls is None:
        initial_controls = np.zeros((horizon - 1, model.n_u))
    try:
        traj = rollout(model, theta, x0, initial_controls, dt)
    except DynamicsError as err:
        raise SolverError(f"initial rollout failed at knot {err.knot}: {err}") from err

    total = cost.trajectory_cost(traj, theta)
    cost_history = [total]
    reg = options.reg_init
    accepted = 0
    iter_order = "second" if mode == "ddp" else "first"

    for _ in range(options.max_iters):
        tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, dt, iter_order)
        ctape = cost.expansions_along(traj, theta)
        bw = backward_pass(tape, ctape, mode, reg)
        while bw is None:
            reg = _grow_reg(reg, options)
            bw = backward_pass(tape, ctape, mode, reg)
        if bw.metric < options.tol:
            break
        stepped = False
        for alpha in options.alphas:
            try:
                candidate = forward_pass(model, theta, traj, bw.gains, alpha)
            except DynamicsError:
                continue
            candidate_cost = cost.trajectory_cost(candidate, theta)
            if candidate_cost < total:
                traj = candidate
                total = candidate_cost
                cost_history.append(total)
                accepted += 1
                reg = _decay_reg(reg, options)
                stepped = True
                break
        if not stepped:
            if reg >= options.reg_max:
                break  # stalled: no step improves the cost even fully damped
            reg = _grow_reg(reg, options)

    # Polish: near the solution the cost is flat to float resolution, which
    # blocks the line search, but unregularized full steps still shrink the
    # stationarity residual quadratically. Accept them on metric decrease.
    for _ in range(options.polish_steps):
        tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, dt, iter_order)
        ctape = cost.expansions_along(traj, theta)
        bw = backward_pass(tape, ctape, mode, 0.0)
        if bw is None:
            break
        try:
            candidate = forward_pass(model, theta, traj, bw.gains, 1.0)
        except DynamicsError:
            break
        cand_tape = model.derivatives_along(
            candidate.states[:-1], candidate.controls, theta, dt, iter_order
        )
        cand_ctape = cost.expansions_along(candidate, theta)
        cand_bw = backward_pass(cand_tape, cand_ctape, mode, 0.0)
        if cand_bw is None or not cand_bw.metric < bw.metric:
            break
        traj = candidate

    # Tapes at the solution: requested derivative order, no regularization.
    tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, dt, options.tape_order)
    ctape = cost.expansions_along(traj, theta)
    final = backward_pass(tape, ctape, mode, 0.0)
    converged = final is not None and final.metric < options.tol
    if final is None:
        final_reg = options.reg_bump
        final = backward_pass(tape, ctape, mode, final_reg)
        while final is None:
            final_reg = _grow_reg(final_reg, options)
            final = backward_pass(tape, ctape, mode, final_reg)

    return SolveResult(
        trajectory=traj,
        theta=theta,
        mode=mode,
        q_tape=final.q_tape,
        value_tape=final.value_tape,
        gains=final.gains,
        derivative_tape=tape,
        cost_tape=ctape,
        converged=converged,
        conv_metric=final.metric,
        iterations=max(1, accepted),
        cost_history=cost_history,
    )


def solve_problem(
    model: DynamicsModel,
    cost: CostModel,
    theta: ParamVector,
    problem: ProblemSpec,
    initial_controls: np.ndarray | None = None,
    tape_order: str | None = None,
) -> SolveResult:
    options = problem.options
    if tape_order is not None and tape_order != options.tape_order:
        options = replace(options, tape_order=tape_order)
    return solve(
        model,
        cost,
        theta,
        problem.x0,
        problem.horizon,
        problem.dt,
        problem.mode,
        options,
        initial_controls,
    )
