import numpy as np
import pytest

import diffoc as oc
from diffoc import DoublePendulum, LinearDynamics, Pendulum, fd_derivatives
from diffoc.problems import double_pendulum_theta, pendulum_theta

BLOCKS = ("fx", "fu", "fxx", "fxu", "fuu", "ftheta", "fxtheta", "futheta")


class TestPendulum:
    model = Pendulum()
    theta = pendulum_theta(0.5, 1e3)

    def test_hanging_equilibrium(self):
        x = self.model.step(np.zeros(2), np.zeros(1), self.theta, 0.01)
        assert np.array_equal(x, np.zeros(2))

    def test_upright_equilibrium(self):
        x0 = np.array([np.pi, 0.0])
        x = self.model.step(x0, np.zeros(1), self.theta, 0.01)
        assert np.allclose(x, x0, atol=1e-15)

    def test_hand_evaluated_step(self):
        # qdd = -(9.81 / 0.5) * sin(pi/2) = -19.62 at the horizontal
        x = self.model.step(np.array([np.pi / 2, 0.0]), np.zeros(1), self.theta, 0.01)
        assert np.allclose(x, [np.pi / 2, -0.1962], atol=1e-12)

    def test_euler_structure(self):
        b = self.model.derivatives(np.array([0.4, -0.2]), np.array([0.3]), self.theta, 0.01)
        assert b.fx[0, 0] == 1.0
        assert b.fx[0, 1] == 0.01
        assert b.fu[0, 0] == 0.0

    def test_analytic_vs_fd(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.uniform(-np.pi, np.pi, 2)
            u = rng.uniform(-2, 2, 1)
            theta = self.theta.with_values([rng.uniform(0.2, 1.2), 1e3])
            b = self.model.derivatives(x, u, theta, 0.01, order="full")
            fd = fd_derivatives(self.model, x, u, theta, 0.01)
            assert np.max(np.abs(b.fx - fd.fx)) < 1e-5
            assert np.max(np.abs(b.fu - fd.fu)) < 1e-5
            for blk in ("fxx", "fxu", "fuu", "fxtheta", "futheta"):
                assert np.max(np.abs(getattr(b, blk) - getattr(fd, blk))) < 1e-3, blk
            assert np.max(np.abs(b.ftheta - fd.ftheta)) < 1e-5

    def test_spec_point_cross_check(self):
        x, u = np.array([0.3, 0.1]), np.array([0.2])
        b = self.model.derivatives(x, u, self.theta, 0.01, order="full")
        fd = fd_derivatives(self.model, x, u, self.theta, 0.01)
        assert np.max(np.abs(b.fx - fd.fx)) < 1e-5
        assert np.max(np.abs(b.fu - fd.fu)) < 1e-5

    def test_energy_conserved_unforced(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-3, 3)])
            qdd = self.model.accel(x, np.zeros(1), self.theta)[0]
            h = 1e-6
            de_dq = (self.model.energy([x[0] + h, x[1]], self.theta)
                     - self.model.energy([x[0] - h, x[1]], self.theta)) / (2 * h)
            de_dw = (self.model.energy([x[0], x[1] + h], self.theta)
                     - self.model.energy([x[0], x[1] - h], self.theta)) / (2 * h)
            assert abs(de_dq * x[1] + de_dw * qdd) < 1e-6

    def test_richardson_consistency(self):
        x, u = np.array([0.7, 1.1]), np.array([0.5])
        errs = []
        for dt in (0.02, 0.01, 0.005):
            one = self.model.step(x, u, self.theta, dt)
            half = self.model.step(self.model.step(x, u, self.theta, dt / 2), u, self.theta, dt / 2)
            errs.append(np.linalg.norm(one - half, np.inf))
        assert 2.5 < errs[0] / errs[1] < 6.0
        assert 2.5 < errs[1] / errs[2] < 6.0

    def test_step_deterministic(self):
        x, u = np.array([0.3, -0.4]), np.array([0.9])
        a = self.model.step(x, u, self.theta, 0.01)
        b = self.model.step(x, u, self.theta, 0.01)
        assert np.array_equal(a, b)

    def test_non_finite_raises(self):
        with pytest.raises(oc.DynamicsError):
            self.model.step(np.array([np.inf, 0.0]), np.zeros(1), self.theta, 0.01)

    def test_order_controls_blocks(self):
        x, u = np.array([0.1, 0.2]), np.array([0.3])
        first = self.model.derivatives(x, u, self.theta, 0.01, order="first")
        assert np.array_equal(first.fxx, np.zeros((2, 2, 2)))
        assert first.ftheta is None
        with pytest.raises(ValueError, match="ftheta"):
            first.require("ftheta")
        second = self.model.derivatives(x, u, self.theta, 0.01, order="second")
        assert second.ftheta is None
        assert np.any(second.fxx != 0.0)
        with pytest.raises(ValueError, match="order"):
            self.model.derivatives(x, u, self.theta, 0.01, order="third")


class TestDoublePendulum:
    model = DoublePendulum()
    theta = double_pendulum_theta(0.4, 0.3, 1e3)

    def test_hanging_equilibrium(self):
        x = self.model.step(np.zeros(4), np.zeros(2), self.theta, 0.01)
        assert np.allclose(x, np.zeros(4), atol=1e-15)

    def test_taylor_vs_fd(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.uniform(-np.pi, np.pi, 4) * np.array([1, 1, 0.5, 0.5])
            u = rng.uniform(-1, 1, 2)
            theta = self.theta.with_values(
                [rng.uniform(0.25, 0.5), rng.uniform(0.25, 0.5), 1e3]
            )
            b = self.model.derivatives(x, u, theta, 0.01, order="full")
            fd = fd_derivatives(self.model, x, u, theta, 0.01)
            assert np.max(np.abs(b.fx - fd.fx)) < 1e-5
            assert np.max(np.abs(b.fu - fd.fu)) < 1e-5
            for blk in ("fxx", "fxu", "fuu", "fxtheta", "futheta"):
                assert np.max(np.abs(getattr(b, blk) - getattr(fd, blk))) < 1e-3, blk
            assert np.max(np.abs(b.ftheta - fd.ftheta)) < 1e-5

    def test_mass_matrix_spd(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            theta = self.theta.with_values(
                [rng.uniform(0.25, 0.5), rng.uniform(0.25, 0.5), 1e3]
            )
            M = self.model.mass_matrix(rng.uniform(-np.pi, np.pi, 2), theta)
            assert np.max(np.abs(M - M.T)) < 1e-12
            assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_energy_conserved_unforced(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = np.concatenate([rng.uniform(-np.pi, np.pi, 2), rng.uniform(-2, 2, 2)])
            qdd = self.model.accel(x, np.zeros(2), self.theta)
            h = 1e-6
            grad = np.zeros(4)
            for i in range(4):
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                grad[i] = (self.model.energy(xp, self.theta)
                           - self.model.energy(xm, self.theta)) / (2 * h)
            xdot = np.concatenate([x[2:], qdd])
            assert abs(grad @ xdot) < 1e-6

    def test_symmetry_of_second_order_blocks(self):
        b = self.model.derivatives(
            np.array([0.3, -0.2, 0.5, 0.1]), np.array([0.2, -0.1]), self.theta, 0.01,
            order="second",
        )
        assert np.allclose(b.fxx, np.swapaxes(b.fxx, 1, 2), atol=1e-12)
        assert np.allclose(b.fuu, np.swapaxes(b.fuu, 1, 2), atol=1e-12)


class TestLinearDynamics:
    def test_identity(self):
        model = LinearDynamics(np.eye(2), np.zeros((2, 1)))
        theta = pendulum_theta()
        x = np.array([0.3, -0.7])
        assert np.array_equal(model.step(x, np.ones(1), theta, 0.01), x)

    def test_double_integrator_derivatives(self):
        dt = 0.01
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[0.0], [dt]])
        model = LinearDynamics(A, B)
        b = model.derivatives(np.ones(2), np.ones(1), pendulum_theta(), dt, order="full")
        assert np.array_equal(b.fx, A)
        assert np.array_equal(b.fu, B)
        for blk in ("fxx", "fxu", "fuu", "ftheta", "fxtheta", "futheta"):
            assert not np.any(getattr(b, blk))

    def test_fd_second_order_vanishes(self):
        model = LinearDynamics(np.array([[1.0, 0.01], [0.0, 1.0]]), np.array([[0.0], [0.01]]))
        fd = fd_derivatives(model, np.ones(2), np.ones(1), pendulum_theta(), 0.01)
        assert np.max(np.abs(fd.fxx)) < 1e-9
        assert np.allclose(fd.fxx, np.swapaxes(fd.fxx, 1, 2), atol=1e-9)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="square"):
            LinearDynamics(np.zeros((2, 3)), np.zeros((2, 1)))
        with pytest.raises(ValueError, match="B"):
            LinearDynamics(np.eye(2), np.zeros((3, 1)))
