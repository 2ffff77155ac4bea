"""
Unit tests for the dense network, its gradients and the Adam optimizer
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import from app
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.errors import ConfigError, NonFiniteError, ShapeError
from app.nn import (
    AdamState,
    Mlp,
    adam_step,
    apply_adam,
    init_mlp,
    load_mlp,
    mlp_backward,
    mlp_forward,
    mlp_from_bytes,
    mlp_gradients,
    mlp_to_bytes,
    polyak_update,
    save_mlp,
)


class TestMlpForward:
    """Test cases for the forward pass"""

    def test_identity_layer(self):
        """Test a single identity layer passes the input through"""
        net = Mlp([2, 2], [np.eye(2)], [np.zeros(2)])
        np.testing.assert_array_equal(mlp_forward(net, [1.0, 2.0]), [1.0, 2.0])

    def test_zero_weights_return_bias(self):
        """Test a zero-weight layer outputs its bias for any input"""
        net = Mlp([4, 1], [np.zeros((1, 4))], [np.array([3.0])])
        np.testing.assert_array_equal(mlp_forward(net, np.arange(4.0)), [3.0])

    def test_matches_hand_rolled_forward(self):
        """Test a seeded two-layer tanh net against a scalar reimplementation"""
        net = init_mlp([1, 3, 1], seed=0)
        x = 0.5
        hidden = [np.tanh(net.weights[0][j, 0] * x + net.biases[0][j]) for j in range(3)]
        expected = sum(net.weights[1][0, j] * hidden[j] for j in range(3)) + net.biases[1][0]
        assert mlp_forward(net, [x])[0] == pytest.approx(expected, abs=1e-14)

    def test_batch_matches_rows(self):
        """Test a batch forward equals stacking single-row forwards"""
        net = init_mlp([3, 5, 2], seed=1)
        x = np.random.default_rng(0).normal(size=(4, 3))
        batch = mlp_forward(net, x)
        for i in range(4):
            np.testing.assert_allclose(batch[i], mlp_forward(net, x[i]), rtol=0, atol=1e-14)

    def test_forward_is_deterministic(self):
        """Test identical parameters and input give bitwise-identical output"""
        net = init_mlp([3, 8, 8, 2], activation="relu", seed=5)
        x = np.array([0.1, -0.2, 0.3])
        assert np.array_equal(mlp_forward(net, x), mlp_forward(net.copy(), x))

    def test_input_shape_mismatch(self):
        """Test a wrong input length is rejected with a shape report"""
        net = init_mlp([3, 4, 1], seed=0)
        with pytest.raises(ShapeError) as err:
            mlp_forward(net, np.zeros(2))
        assert "expected shape (3,)" in str(err.value)

    def test_output_tanh_is_bounded(self):
        """Test the tanh output activation keeps outputs in (-1, 1)"""
        net = init_mlp([2, 4, 3], output_activation="tanh", seed=2)
        out = mlp_forward(net, 100.0 * np.ones((5, 2)))
        assert np.all(np.abs(out) <= 1.0)


class TestMlpValidation:
    """Test cases for network construction"""

    def test_weight_shape_checked(self):
        """Test weights[i] must be layer_sizes[i+1] x layer_sizes[i]"""
        with pytest.raises(ShapeError):
            Mlp([2, 3], [np.zeros((2, 3))], [np.zeros(3)])

    def test_unknown_activation(self):
        """Test an unknown hidden activation is a config error"""
        with pytest.raises(ConfigError):
            init_mlp([2, 3, 1], activation="sigmoid")

    def test_parameter_count_constant(self):
        """Test setting flat parameters keeps the parameter count"""
        net = init_mlp([3, 4, 2], seed=0)
        count = net.num_parameters()
        net.set_flat_parameters(np.arange(count, dtype=np.float64))
        assert net.num_parameters() == count == 3 * 4 + 4 + 4 * 2 + 2
        with pytest.raises(ShapeError):
            net.set_flat_parameters(np.zeros(count + 1))

    def test_zero_output_layer(self):
        """Test zero_output_layer makes the initial output exactly the zero bias"""
        net = init_mlp([3, 6, 1], seed=0, zero_output_layer=True)
        np.testing.assert_array_equal(mlp_forward(net, np.ones((4, 3))), np.zeros((4, 1)))


class TestMlpGradients:
    """Test cases for reverse-mode gradients"""

    def test_linear_layer_gradient(self):
        """Test y = Wx gives dW = g x^T"""
        rng = np.random.default_rng(0)
        w = rng.normal(size=(2, 3))
        net = Mlp([3, 2], [w], [np.zeros(2)])
        x = rng.normal(size=3)
        g = rng.normal(size=2)
        grads = mlp_gradients(net, x, g)
        np.testing.assert_allclose(grads.weights[0], np.outer(g, x), atol=1e-14)
        np.testing.assert_allclose(grads.biases[0], g, atol=1e-14)

    def test_zero_upstream(self):
        """Test a zero upstream gives all-zero gradients"""
        net = init_mlp([3, 5, 5, 2], seed=3)
        grads = mlp_gradients(net, np.ones(3), np.zeros(2))
        assert np.all(grads.flat() == 0.0)

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_finite_difference_check(self, activation, numeric_gradient):
        """Test analytic parameter gradients against central differences on random probes"""
        rng = np.random.default_rng(42)
        worst = 0.0
        for probe in range(100):
            sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, 17)) for _ in range(int(rng.integers(0, 3)))] \
                + [int(rng.integers(1, 4))]
            net = init_mlp(sizes, activation=activation, seed=probe)
            x = rng.normal(size=sizes[0])
            g = rng.normal(size=sizes[-1])
            analytic = mlp_gradients(net, x, g).flat()

            flat = net.flat_parameters()

            def objective(p):
                probe_net = net.copy()
                probe_net.set_flat_parameters(p)
                return float(np.dot(g, mlp_forward(probe_net, x)))

            numeric = numeric_gradient(objective, flat.copy(), 1e-5)
            scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
        assert worst < 1e-4

    def test_input_gradient(self, numeric_gradient):
        """Test the input gradient against central differences"""
        net = init_mlp([4, 8, 3], seed=7)
        x = np.array([0.3, -0.1, 0.7, 0.2])
        g = np.array([1.0, -2.0, 0.5])
        _, grad_x = mlp_backward(net, x, g)
        numeric = numeric_gradient(lambda v: float(np.dot(g, mlp_forward(net, v))), x.copy())
        np.testing.assert_allclose(grad_x, numeric, rtol=1e-6, atol=1e-8)

    def test_batch_gradients_are_summed(self):
        """Test batch gradients equal the sum of per-row gradients"""
        net = init_mlp([2, 4, 1], seed=0)
        x = np.array([[0.1, 0.2], [-0.3, 0.4]])
        g = np.array([[1.0], [2.0]])
        total = mlp_gradients(net, x, g).flat()
        rows = mlp_gradients(net, x[0], g[0]).flat() + mlp_gradients(net, x[1], g[1]).flat()
        np.testing.assert_allclose(total, rows, atol=1e-13)

    def test_non_finite_reports_layer(self):
        """Test a non-finite intermediate raises with the layer index"""
        net = init_mlp([2, 3, 1], activation="relu", seed=0)
        net.weights[0][:] = 1e308
        with pytest.raises(NonFiniteError) as err:
            mlp_gradients(net, np.array([10.0, 10.0]), np.ones(1))
        assert "layer" in str(err.value)

    def test_upstream_shape_mismatch(self):
        """Test an upstream of the wrong length is rejected"""
        net = init_mlp([2, 3, 2], seed=0)
        with pytest.raises(ShapeError):
            mlp_gradients(net, np.zeros(2), np.zeros(3))


class TestAdam:
    """Test cases for the Adam optimizer"""

    def test_zero_gradient_is_fixed_point(self):
        """Test zero gradients leave parameters and moments unchanged"""
        params = [np.array([1.0, -2.0]), np.array([[0.5]])]
        state = AdamState.zeros_like(params, learning_rate=0.1)
        new_params, new_state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], state)
        for old, new in zip(params, new_params):
            np.testing.assert_array_equal(old, new)
        assert all(np.all(m == 0.0) for m in new_state.first_moment)
        assert all(np.all(v == 0.0) for v in new_state.second_moment)
        assert new_state.step_count == 1

    def test_first_step_is_signed_learning_rate(self):
        """Test the first bias-corrected step moves by about lr * sign(g)"""
        params = [np.array([0.0, 0.0, 0.0])]
        state = AdamState.zeros_like(params, learning_rate=0.01)
        new_params, _ = adam_step(params, [np.array([3.0, -0.2, 50.0])], state)
        np.testing.assert_allclose(new_params[0], [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_quadratic_convergence(self):
        """Test 100 Adam steps on (w - 3)^2 from 0 with lr 0.1"""
        params = [np.array([0.0])]
        state = AdamState.zeros_like(params, learning_rate=0.1)
        for _ in range(100):
            params, state = adam_step(params, [2.0 * (params[0] - 3.0)], state)
        assert abs(params[0][0] - 3.0) < 0.1
        assert state.step_count == 100

    def test_apply_adam_updates_network(self):
        """Test apply_adam changes the net in place and advances the step count"""
        net = init_mlp([2, 3, 1], seed=0)
        before = net.flat_parameters()
        grads = mlp_gradients(net, np.ones(2), np.ones(1))
        state = apply_adam(net, grads, AdamState.zeros_like(net.parameters()))
        assert state.step_count == 1
        assert not np.array_equal(before, net.flat_parameters())


class TestPolyakAndSerialization:
    """Test cases for target averaging and the binary parameter format"""

    def test_polyak_fixed_point(self):
        """Test averaging a net toward an identical net changes nothing"""
        live = init_mlp([3, 4, 1], seed=0)
        target = live.copy()
        polyak_update(target, live, 0.3)
        np.testing.assert_allclose(target.flat_parameters(), live.flat_parameters(), atol=0)

    def test_polyak_tau_one_copies(self):
        """Test tau = 1 copies the live parameters"""
        live = init_mlp([3, 4, 1], seed=0)
        target = init_mlp([3, 4, 1], seed=1)
        polyak_update(target, live, 1.0)
        np.testing.assert_array_equal(target.flat_parameters(), live.flat_parameters())

    def test_binary_format_preserves_network(self, tmp_path):
        """Test save/load reproduces structure and outputs exactly"""
        net = init_mlp([3, 7, 2], activation="relu", output_activation="tanh", seed=9)
        path = tmp_path / "net.bin"
        save_mlp(net, path)
        loaded = load_mlp(path)
        assert loaded.layer_sizes == [3, 7, 2]
        assert loaded.activations == ["relu"]
        assert loaded.output_activation == "tanh"
        x = np.array([0.2, -0.4, 1.0])
        assert np.array_equal(mlp_forward(loaded, x), mlp_forward(net, x))
        assert path.read_bytes()[:4] == b"DMLP"

    def test_rejects_foreign_bytes(self):
        """Test non-MLP bytes are rejected"""
        with pytest.raises(ConfigError):
            mlp_from_bytes(b"NOPE" + mlp_to_bytes(init_mlp([1, 1]))[4:])
