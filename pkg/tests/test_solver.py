import numpy as np
import pytest

import diffoc as oc
from diffoc.costs import CostExpansion
from diffoc.problems import double_integrator, pendulum_theta
from diffoc.solver import backward_pass, forward_pass, rollout


def linear_setup(qf=1e3):
    model = double_integrator()
    theta = oc.ParamVector([qf], ("qf",), [(0.5, 2e4)])
    cost = oc.QuadraticGoalCost(goal=[1.0, 0.0])
    return model, cost, theta


class TestLinearQuadratic:
    def test_single_iteration_both_modes(self):
        model, cost, theta = linear_setup()
        for mode in ("ddp", "ilqr"):
            r = oc.solve(model, cost, theta, np.zeros(2), 50, 0.01, mode=mode)
            assert r.converged
            assert r.iterations == 1
            assert r.conv_metric < 1e-12

    def test_modes_produce_identical_tapes(self):
        model, cost, theta = linear_setup()
        rd = oc.solve(model, cost, theta, np.zeros(2), 50, 0.01, mode="ddp")
        ri = oc.solve(model, cost, theta, np.zeros(2), 50, 0.01, mode="ilqr")
        assert np.array_equal(rd.trajectory.states, ri.trajectory.states)
        assert np.array_equal(rd.trajectory.controls, ri.trajectory.controls)
        for a, b in zip(rd.q_tape, ri.q_tape):
            for field in ("qx", "qu", "qxx", "quu", "qux"):
                assert np.array_equal(getattr(a, field), getattr(b, field))
        for a, b in zip(rd.value_tape, ri.value_tape):
            assert np.array_equal(a.vx, b.vx)
            assert np.array_equal(a.vxx, b.vxx)

    def test_forward_full_step_reaches_dense_qp_optimum(self):
        model, cost, theta = linear_setup(qf=200.0)
        T, dt = 10, 0.01
        r = oc.solve(model, cost, theta, np.zeros(2), T, dt, mode="ddp",
                     options=oc.SolverOptions(tol=1e-16))
        solver_cost = cost.trajectory_cost(r.trajectory, theta)

        # dense equality-constrained QP over z = [x_0..x_{T-1}, u_0..u_{T-2}]
        n_x, n_u = 2, 1
        nz = T * n_x + (T - 1) * n_u
        H = np.zeros((nz, nz))
        g = np.zeros(nz)
        xof = lambda t: t * n_x
        uof = lambda t: T * n_x + t * n_u
        for t in range(T - 1):
            H[uof(t), uof(t)] = 2e-2
        qf = theta.get("qf")
        H[xof(T - 1):, xof(T - 1):][:2, :2] = 2 * qf * np.eye(2)
        g[xof(T - 1):xof(T - 1) + 2] = -2 * qf * np.array([1.0, 0.0])
        A = np.zeros((T * n_x, nz))
        b = np.zeros(T * n_x)
        A[0:2, 0:2] = np.eye(2)
        for t in range(T - 1):
            rows = slice((t + 1) * n_x, (t + 2) * n_x)
            A[rows, xof(t):xof(t) + 2] = model.A
            A[rows, uof(t):uof(t) + 1] = model.B
            A[rows, xof(t + 1):xof(t + 1) + 2] -= np.eye(2)
        KKT = np.block([[H, A.T], [A, np.zeros((T * n_x, T * n_x))]])
        sol = np.linalg.solve(KKT, np.concatenate([-g, b]))
        z = sol[:nz]
        const = qf * 1.0  # (x_T - goal)' Qf (x_T - goal) expanded constant
        qp_cost = 0.5 * z @ H @ z + g @ z + const
        assert abs(solver_cost - qp_cost) < 1e-9


class TestBackwardPass:
    def test_terminal_expansion_is_goal_cost(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta()
        traj = rollout(model, theta, problem.x0, np.zeros((4, 1)), problem.dt)
        ctape = cost.expansions_along(traj, theta)
        tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, problem.dt, "second")
        bw = backward_pass(tape, ctape, "ddp", 0.0)
        assert np.array_equal(bw.value_tape[-1].vx, ctape[-1].lx)
        assert np.array_equal(bw.value_tape[-1].vxx, ctape[-1].lxx)

    def test_two_knot_gains_match_fd_of_stage_objective(self, pendulum_problem):
        # with one control knot the DDP gain is the Newton step on
        # phi(u) = running(x0, u) + terminal(f(x0, u))
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 50.0)
        x0 = np.array([0.4, 0.0])
        u0 = np.array([0.3])
        traj = rollout(model, theta, x0, u0[None, :], problem.dt)
        ctape = cost.expansions_along(traj, theta)
        tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, problem.dt, "second")
        bw = backward_pass(tape, ctape, "ddp", 0.0)

        def phi(u):
            xs = model.step(x0, np.array([u]), theta, problem.dt)
            return (cost.value(x0, np.array([u]), theta, 0, 2)
                    + cost.value(xs, np.zeros(1), theta, 1, 2))

        h = 1e-5
        d1 = (phi(u0[0] + h) - phi(u0[0] - h)) / (2 * h)
        d2 = (phi(u0[0] + h) - 2 * phi(u0[0]) + phi(u0[0] - h)) / h**2
        assert np.isclose(bw.gains.k[0][0], d1 / d2, rtol=1e-5)

        # hand-assembled one-step minimizer
        b = tape[0]
        quu = ctape[0].luu + b.fu.T @ ctape[1].lxx @ b.fu + oc.tensor_contract_left(ctape[1].lx, b.fuu)
        qu = ctape[0].lu + b.fu.T @ ctape[1].lx
        assert np.allclose(bw.gains.k[0], np.linalg.solve(quu, qu), atol=1e-12)

    def test_reject_on_indefinite_quu(self):
        model, cost, theta = linear_setup()
        traj = rollout(model, theta, np.zeros(2), np.zeros((2, 1)), 0.01)
        tape = model.derivatives_along(traj.states[:-1], traj.controls, theta, 0.01, "second")
        bad = CostExpansion(
            lx=np.zeros(2), lu=np.zeros(1), lxx=np.zeros((2, 2)),
            lxu=np.zeros((2, 1)), luu=-np.eye(1),
            lxtheta=np.zeros((2, 1)), lutheta=np.zeros((1, 1)),
        )
        terminal = cost.expansions_along(traj, theta)[-1]
        assert backward_pass(tape, [bad, bad, terminal], "ddp", 0.0) is None
        assert backward_pass(tape, [bad, bad, terminal], "ddp", 10.0) is not None


class TestForwardPass:
    def test_alpha_zero_returns_reference(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta()
        traj = rollout(model, theta, problem.x0, 0.1 * np.ones((10, 1)), problem.dt)
        gains = oc.GainSchedule(k=np.ones((10, 1)), K=np.ones((10, 1, 2)))
        out = forward_pass(model, theta, traj, gains, 0.0)
        assert np.array_equal(out.states, traj.states)
        assert np.array_equal(out.controls, traj.controls)

    def test_zero_gains_reroll_reference_controls(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta()
        traj = rollout(model, theta, problem.x0, 0.1 * np.ones((10, 1)), problem.dt)
        gains = oc.GainSchedule(k=np.zeros((10, 1)), K=np.zeros((10, 1, 2)))
        out = forward_pass(model, theta, traj, gains, 1.0)
        assert np.array_equal(out.controls, traj.controls)
        assert np.array_equal(out.states, traj.states)

    def test_alpha_validation(self, pendulum_problem):
        model, _, problem = pendulum_problem
        theta = pendulum_theta()
        traj = rollout(model, theta, problem.x0, np.zeros((3, 1)), problem.dt)
        gains = oc.GainSchedule(k=np.zeros((3, 1)), K=np.zeros((3, 1, 2)))
        with pytest.raises(ValueError):
            forward_pass(model, theta, traj, gains, 1.5)


class TestSwingUp:
    def test_converges_in_both_modes(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        costs = {}
        for mode in ("ddp", "ilqr"):
            r = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode=mode)
            assert r.converged and r.conv_metric < 1e-12
            assert r.iterations < 200
            costs[mode] = cost.trajectory_cost(r.trajectory, theta)
        assert abs(costs["ddp"] - costs["ilqr"]) < 1e-8

    def test_monotone_descent(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        r = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ddp")
        hist = r.cost_history
        assert all(b < a for a, b in zip(hist, hist[1:]))

    def test_gap_free_rollout(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        r = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ilqr")
        for t in range(49):
            gap = model.step(r.trajectory.states[t], r.trajectory.controls[t], theta, 0.01) \
                - r.trajectory.states[t + 1]
            assert np.max(np.abs(gap)) < 1e-12

    def test_quu_and_vxx_symmetric(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        r = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ddp")
        for q in r.q_tape:
            assert np.max(np.abs(q.quu - q.quu.T)) < 1e-12
            assert np.max(np.abs(q.qxx - q.qxx.T)) < 1e-10
        for v in r.value_tape:
            assert np.array_equal(v.vxx, v.vxx.T)

    def test_already_optimal_initial_state(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        goal = np.array([np.pi, 0.0])
        r = oc.solve(model, cost, theta, goal, 50, 0.01, mode="ddp")
        assert r.converged
        assert r.iterations == 1
        assert np.max(np.abs(r.trajectory.controls)) < 1e-12

    def test_deterministic(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        a = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ilqr")
        b = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ilqr")
        assert np.array_equal(a.trajectory.controls, b.trajectory.controls)
        assert a.conv_metric == b.conv_metric

    def test_regularization_limit_raises(self):
        # an unconditionally indefinite control cost can never be solved
        class BadCost(oc.QuadraticGoalCost):
            def expansion(self, x, u, theta, knot, horizon):
                e = super().expansion(x, u, theta, knot, horizon)
                if knot < horizon - 1:
                    return CostExpansion(
                        lx=e.lx, lu=e.lu, lxx=e.lxx, lxu=e.lxu,
                        luu=-1e12 * np.eye(1),
                        lxtheta=e.lxtheta, lutheta=e.lutheta,
                    )
                return e

        model = double_integrator()
        theta = oc.ParamVector([1e3], ("qf",), [(0.5, 2e4)])
        with pytest.raises(oc.SolverError, match="regularization"):
            oc.solve(model, BadCost(goal=[1.0, 0.0]), theta, np.zeros(2), 10, 0.01,
                     mode="ddp", options=oc.SolverOptions(reg_max=1e3))

    def test_warm_start_accepted(self, pendulum_problem):
        model, cost, problem = pendulum_problem
        theta = pendulum_theta(0.5, 1e3)
        base = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ilqr")
        warm = oc.solve(model, cost, theta, problem.x0, 50, 0.01, mode="ilqr",
                        initial_controls=base.trajectory.controls)
        assert warm.converged
        assert abs(cost.trajectory_cost(warm.trajectory, theta)
                   - cost.trajectory_cost(base.trajectory, theta)) < 1e-9

    def test_lambda_matches_value_gradient_tape(self, pendulum_tight):
        model, cost, problem = pendulum_tight
        theta = pendulum_theta(0.5, 1e3)
        r = oc.solve_problem(model, cost, theta, problem)
        lam = oc.multipliers(r)
        vx = np.array([v.vx for v in r.value_tape])
        assert np.max(np.abs(lam - vx)) < 1e-6
