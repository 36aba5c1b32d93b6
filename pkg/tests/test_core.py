import numpy as np
import pytest

from diffoc import ParamVector, Trajectory, tensor_contract_left


def make_theta():
    return ParamVector([0.5, 1e3], ("rho", "qf"), [(0.1, 1.0), (1.0, 1e4)])


class TestParamVector:
    def test_lookup(self):
        theta = make_theta()
        assert theta.index("qf") == 1
        assert theta.get("rho") == 0.5
        assert len(theta) == 2

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="qqf"):
            make_theta().index("qqf")

    def test_name_count_mismatch(self):
        with pytest.raises(ValueError, match="names"):
            ParamVector([1.0, 2.0], ("a",), [(0, 2), (0, 3)])

    def test_duplicate_names(self):
        with pytest.raises(ValueError, match="duplicate"):
            ParamVector([1.0, 2.0], ("a", "a"), [(0, 2), (0, 3)])

    def test_out_of_bounds(self):
        with pytest.raises(ValueError, match="rho"):
            ParamVector([2.0, 10.0], ("rho", "qf"), [(0.1, 1.0), (1.0, 1e4)])

    def test_with_values(self):
        theta = make_theta().with_values([0.7, 2e3])
        assert theta.get("rho") == 0.7
        with pytest.raises(ValueError):
            make_theta().with_values([5.0, 2e3])

    def test_relax_bounds(self):
        theta = make_theta().with_values([5.0, 2e3], relax_bounds=True)
        assert theta.get("rho") == 5.0
        assert theta.bounds[0, 1] == 5.0

    def test_clip(self):
        clipped = make_theta().clip([3.0, -5.0])
        assert clipped.tolist() == [1.0, 1.0]


class TestTrajectory:
    def test_shapes(self):
        traj = Trajectory(states=np.zeros((5, 2)), controls=np.ones((4, 1)), dt=0.1)
        assert traj.horizon == 5
        assert np.array_equal(traj.x0, np.zeros(2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="controls"):
            Trajectory(states=np.zeros((5, 2)), controls=np.zeros((3, 1)), dt=0.1)

    def test_bad_dt(self):
        with pytest.raises(ValueError, match="dt"):
            Trajectory(states=np.zeros((2, 2)), controls=np.zeros((1, 1)), dt=0.0)


class TestTensorContract:
    def test_zero_vector(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((3, 4, 2))
        assert np.array_equal(tensor_contract_left(np.zeros(3), t), np.zeros((4, 2)))

    def test_zero_tensor(self):
        assert np.array_equal(
            tensor_contract_left(np.ones(3), np.zeros((3, 2, 2))), np.zeros((2, 2))
        )

    def test_basis_extraction(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((3, 4, 5))
        e0 = np.zeros(3)
        e0[0] = 1.0
        assert np.allclose(tensor_contract_left(e0, t), t[0])

    def test_linearity(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((4, 3, 3))
        v1, v2 = rng.standard_normal(4), rng.standard_normal(4)
        lhs = tensor_contract_left(2.5 * v1 - 0.5 * v2, t)
        rhs = 2.5 * tensor_contract_left(v1, t) - 0.5 * tensor_contract_left(v2, t)
        assert np.allclose(lhs, rhs, atol=1e-14)

    def test_symmetric_tensor_gives_symmetric_matrix(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal((3, 4, 4))
        t = 0.5 * (t + np.swapaxes(t, 1, 2))
        m = tensor_contract_left(rng.standard_normal(3), t)
        assert np.allclose(m, m.T, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            tensor_contract_left(np.zeros(2), np.zeros((3, 2, 2)))
