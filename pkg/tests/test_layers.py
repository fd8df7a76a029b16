"""
Unit tests for the numerical core layers and gradient checking.
"""
import numpy as np
import pytest

from app.numcore.exceptions import ConfigurationError, EmptyMaskError, NumericalError
from app.numcore.gradcheck import LossEvaluation, gradient_check, relative_error
from app.numcore.layers import (
    conv2d_backward,
    conv2d_forward,
    entropy,
    fully_connected_backward,
    fully_connected_forward,
    log_prob_gradient,
    masked_log_softmax,
    masked_softmax,
    relu_backward,
    relu_forward,
)
from app.numcore.tensor import CHECK_DTYPE, Parameter, ParameterSet, Tensor


def make_params(seed: int = 0, **shapes) -> ParameterSet:
    """Helper to create random float64 parameters."""
    rng = np.random.default_rng(seed)
    return ParameterSet([
        Parameter(name, Tensor(rng.normal(size=shape), dtype=CHECK_DTYPE)) for name, shape in shapes.items()
    ])


class TestTensor:
    """Test cases for Tensor and ParameterSet."""

    def test_grad_matches_shape(self):
        """Test that the gradient buffer starts at zero with the data's shape."""
        tensor = Tensor(np.ones((2, 3)))
        assert tensor.grad.shape == (2, 3)
        assert not tensor.grad.any()
        assert tensor.dtype == np.float32

    def test_duplicate_names_rejected(self):
        """Test that parameter names are unique."""
        params = ParameterSet([Parameter("a", Tensor(np.zeros(2)))])
        with pytest.raises(ConfigurationError):
            params.add(Parameter("a", Tensor(np.zeros(3))))

    def test_non_finite_is_error(self):
        """Test that NaN values are reported."""
        tensor = Tensor(np.array([1.0, np.nan]))
        with pytest.raises(NumericalError):
            tensor.check_finite("x")


class TestConv2d:
    """Test cases for conv2d."""

    def test_identity_kernel(self):
        """Test that a 1x1 unit kernel copies the input."""
        x = np.random.default_rng(1).normal(size=(1, 5, 5))
        out, _ = conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_all_ones_kernel_with_padding(self):
        """Test the hand-computed 3x3 cross-correlation on a 2x2 grid."""
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out, _ = conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1))
        np.testing.assert_array_equal(out, [[[10.0, 10.0], [10.0, 10.0]]])

    def test_zero_weights(self):
        """Test that zero weights and bias give zero output."""
        x = np.random.default_rng(2).normal(size=(3, 6, 6))
        out, _ = conv2d_forward(x, np.zeros((4, 3, 3, 3)), np.zeros(4))
        assert out.shape == (4, 6, 6)
        assert not out.any()

    @pytest.mark.parametrize("kernel", [1, 3, 5, 7])
    def test_same_padding_preserves_size(self, kernel):
        """Test that every odd kernel keeps the spatial size."""
        out, _ = conv2d_forward(np.ones((2, 8, 8)), np.ones((3, 2, kernel, kernel)), np.zeros(3))
        assert out.shape == (3, 8, 8)

    def test_channel_mismatch(self):
        """Test that mismatched input channels raise a configuration error."""
        with pytest.raises(ConfigurationError):
            conv2d_forward(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))

    def test_even_kernel_rejected(self):
        """Test that even kernels are rejected."""
        with pytest.raises(ConfigurationError):
            conv2d_forward(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)), np.zeros(1))

    def test_gradients_match_finite_differences(self):
        """Test conv2d backward against central differences."""
        params = make_params(3, x=(2, 5, 5), w=(3, 2, 3, 3), b=(3,))
        upstream = np.random.default_rng(4).normal(size=(3, 5, 5))

        def objective(with_grads):
            out, cache = conv2d_forward(params["x"].data, params["w"].data, params["b"].data)
            loss = float(np.sum(out * upstream))
            grads = None
            if with_grads:
                dx, dw, db = conv2d_backward(upstream, cache)
                grads = {"x": dx, "w": dw, "b": db}
            return LossEvaluation(loss, grads)

        report = gradient_check(objective, params)
        assert report.max_relative_error < 1e-4
        assert report.checked == params.num_scalars()


class TestFullyConnected:
    """Test cases for fully_connected."""

    def test_identity(self):
        """Test the identity weight matrix."""
        out, _ = fully_connected_forward(np.array([5.0, -3.0]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out, [5.0, -3.0])

    def test_hand_product(self):
        """Test a hand-computed matrix-vector product."""
        out, _ = fully_connected_forward(np.ones(2), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_bias_only(self):
        """Test zero weights with a bias."""
        out, _ = fully_connected_forward(np.array([9.0, -9.0]), np.zeros((2, 2)), np.ones(2))
        np.testing.assert_array_equal(out, [1.0, 1.0])

    def test_dimension_mismatch(self):
        """Test that mismatched dimensions raise."""
        with pytest.raises(ConfigurationError):
            fully_connected_forward(np.ones(3), np.ones((2, 2)), np.zeros(2))

    def test_squared_loss_gradient_check(self):
        """Test a single FC layer with squared loss against finite differences."""
        params = make_params(5, w=(4, 3), b=(4,))
        x = np.random.default_rng(6).normal(size=3)
        target = np.random.default_rng(7).normal(size=4)

        def objective(with_grads):
            out, cache = fully_connected_forward(x, params["w"].data, params["b"].data)
            diff = out - target
            grads = None
            if with_grads:
                _, dw, db = fully_connected_backward(2 * diff, cache)
                grads = {"w": dw, "b": db}
            return LossEvaluation(float(diff @ diff), grads)

        assert gradient_check(objective, params).max_relative_error < 1e-4


class TestRelu:
    """Test cases for relu."""

    def test_values(self):
        """Test max(0, x) on mixed input."""
        out, _ = relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        """Test that negative inputs block the gradient."""
        out, gate = relu_forward(-np.ones(4))
        assert not out.any()
        assert not relu_backward(np.ones(4), gate).any()

    def test_all_positive(self):
        """Test that positive inputs pass the gradient through."""
        x = np.array([0.5, 1.0, 3.0])
        out, gate = relu_forward(x)
        np.testing.assert_array_equal(out, x)
        np.testing.assert_array_equal(relu_backward(np.array([1.0, 2.0, 3.0]), gate), [1.0, 2.0, 3.0])


class TestMaskedSoftmax:
    """Test cases for masked_softmax."""

    def test_uniform(self):
        """Test equal logits give a uniform distribution."""
        np.testing.assert_allclose(masked_softmax(np.zeros(3), np.ones(3, dtype=bool)), [1 / 3] * 3)

    def test_masked_entry(self):
        """Test the hand-computed masked example."""
        probs = masked_softmax(np.array([1.0, 2.0, 3.0]), np.array([True, False, True]))
        np.testing.assert_allclose(probs, [0.1192, 0.0, 0.8808], atol=1e-4)
        assert probs[1] == 0.0

    def test_single_legal_entry(self):
        """Test that one legal entry gives a one-hot distribution."""
        probs = masked_softmax(np.array([5.0, -2.0, 9.0]), np.array([False, True, False]))
        np.testing.assert_array_equal(probs, [0.0, 1.0, 0.0])

    def test_all_false_mask(self):
        """Test that an empty mask is an error."""
        with pytest.raises(EmptyMaskError):
            masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))

    def test_sum_and_shift_invariance(self):
        """Test normalization and invariance to a constant shift."""
        rng = np.random.default_rng(8)
        for _ in range(50):
            logits = rng.normal(scale=5.0, size=7)
            mask = rng.random(7) < 0.6
            mask[rng.integers(7)] = True
            probs = masked_softmax(logits, mask)
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)
            shifted = masked_softmax(logits + rng.normal() * 10, mask)
            np.testing.assert_allclose(shifted, probs, atol=1e-6)

    def test_large_logits_are_stable(self):
        """Test that huge logits do not overflow."""
        probs = masked_softmax(np.array([1000.0, 1001.0]))
        assert np.all(np.isfinite(probs))
        assert probs.sum() == pytest.approx(1.0)

    def test_log_softmax_matches(self):
        """Test log-softmax against log of softmax on legal entries."""
        logits = np.array([0.3, -1.2, 2.5, 0.0])
        mask = np.array([True, True, False, True])
        log_probs = masked_log_softmax(logits, mask)
        assert log_probs[2] == -np.inf
        np.testing.assert_allclose(np.exp(log_probs[mask]), masked_softmax(logits, mask)[mask])

    def test_masked_log_prob_gradient_check(self):
        """Test a log-prob loss through a masked softmax against finite differences."""
        params = make_params(9, logits=(5,))
        mask = np.array([True, False, True, True, False])

        def objective(with_grads):
            log_probs = masked_log_softmax(params["logits"].data, mask)
            grads = None
            if with_grads:
                probs = masked_softmax(params["logits"].data, mask)
                grads = {"logits": -log_prob_gradient(probs, 2)}
            return LossEvaluation(-float(log_probs[2]), grads)

        assert gradient_check(objective, params).max_relative_error < 1e-4


class TestEntropy:
    """Test cases for entropy."""

    def test_hand_value(self):
        """Test -sum p ln p for the masked [1, 2, 3] distribution."""
        logits = np.array([1.0, 2.0, 3.0])
        mask = np.array([True, False, True])
        probs = masked_softmax(logits, mask)
        assert entropy(probs, masked_log_softmax(logits, mask)) == pytest.approx(0.36534, abs=1e-4)

    def test_one_hot(self):
        """Test that a one-hot distribution has zero entropy."""
        probs = np.array([0.0, 1.0, 0.0])
        assert entropy(probs, masked_log_softmax(np.zeros(3), probs > 0)) == 0.0


class TestGradientCheck:
    """Test cases for the gradient checker itself."""

    def test_requires_float64(self):
        """Test that float32 parameters are refused."""
        params = ParameterSet([Parameter("w", Tensor(np.ones(2)))])
        with pytest.raises(ConfigurationError):
            gradient_check(lambda with_grads: LossEvaluation(0.0, {"w": np.zeros(2)}), params)

    def test_non_finite_loss(self):
        """Test that a NaN loss is an error."""
        params = make_params(w=(2,))
        with pytest.raises(NumericalError):
            gradient_check(lambda with_grads: LossEvaluation(float("nan"), {"w": np.zeros(2)}), params)

    def test_ignored_parameter(self):
        """Test that a parameter the loss ignores has zero gradients both ways."""
        params = make_params(10, used=(3,), unused=(2,))

        def objective(with_grads):
            used = params["used"].data
            grads = {"used": 2 * used, "unused": np.zeros(2)} if with_grads else None
            return LossEvaluation(float(used @ used), grads)

        report = gradient_check(objective, params)
        assert report.max_relative_error < 1e-4

    def test_relative_error_floor(self):
        """Test the 1e-8 denominator floor."""
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.0) == 0.0
