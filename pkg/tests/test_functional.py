import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pedcross import functional as F
from pedcross.autograd import Tensor


class TestLinear:
    def test_identity(self):
        y = F.linear(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)),
                     Tensor(np.zeros(2)))
        np.testing.assert_array_equal(y.numpy(), [[1.0, 0.0]])

    def test_hand_computed(self):
        y = F.linear(Tensor([[1.0, 2.0]]),
                     Tensor([[1.0, 1.0], [1.0, -1.0]]),
                     Tensor([0.0, 1.0]))
        np.testing.assert_allclose(y.numpy(), [[3.0, 0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


class TestAttention:
    def test_single_key_returns_value(self, rng):
        q = Tensor(rng.standard_normal((2, 1, 4)))
        v = Tensor(rng.standard_normal((2, 1, 4)))
        out = F.scaled_dot_product_attention(q, q, v)
        np.testing.assert_allclose(out.numpy(), v.numpy(), rtol=1e-6)

    def test_identical_keys_average_values(self, rng):
        k = Tensor(np.tile(rng.standard_normal((1, 1, 4)), (1, 5, 1)))
        q = Tensor(rng.standard_normal((1, 3, 4)))
        v = Tensor(rng.standard_normal((1, 5, 4)))
        out = F.scaled_dot_product_attention(q, k, v)
        expected = v.numpy().mean(axis=1, keepdims=True)
        np.testing.assert_allclose(out.numpy(),
                                   np.tile(expected, (1, 3, 1)), rtol=1e-5)

    def test_two_token_softmax_hand_computed(self):
        # q = k with a large scale: each query locks onto its own value row
        base = np.array([[10.0, 0.0], [0.0, 10.0]], dtype=np.float64)
        q = Tensor(base[None])
        v = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None])
        scores = base @ base.T / math.sqrt(2)
        weights = np.exp(scores - scores.max(1, keepdims=True))
        weights /= weights.sum(1, keepdims=True)
        expected = weights @ v.numpy()[0]
        out = F.scaled_dot_product_attention(q, q, v)
        np.testing.assert_allclose(out.numpy()[0], expected, rtol=1e-6)

    def test_empty_tensor_rejected(self):
        empty = Tensor(np.zeros((1, 0, 4)))
        with pytest.raises(ValueError, match="empty"):
            F.scaled_dot_product_attention(empty, empty, empty)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_rows_sum_to_one_and_convex_hull(self, seed):
        r = np.random.default_rng(seed)
        q = Tensor(r.standard_normal((2, 4, 3)))
        k = Tensor(r.standard_normal((2, 4, 3)))
        v = Tensor(r.standard_normal((2, 4, 3)))
        scores = (q.numpy() @ np.swapaxes(k.numpy(), -1, -2)) / math.sqrt(3)
        w = F.softmax(Tensor(scores), axis=-1).numpy()
        np.testing.assert_allclose(w.sum(-1), np.ones((2, 4)), atol=1e-6)
        out = F.scaled_dot_product_attention(q, k, v).numpy()
        lo = v.numpy().min(axis=-2, keepdims=True) - 1e-5
        hi = v.numpy().max(axis=-2, keepdims=True) + 1e-5
        assert np.all(out >= lo) and np.all(out <= hi)


class TestSoftmaxGelu:
    def test_softmax_symmetry(self):
        np.testing.assert_allclose(
            F.softmax(Tensor([0.0, 0.0]), axis=-1).numpy(), [0.5, 0.5])

    def test_softmax_bad_axis(self):
        with pytest.raises(ValueError, match="axis"):
            F.softmax(Tensor([1.0, 2.0]), axis=3)

    def test_gelu_fixed_points(self):
        assert F.gelu(Tensor([0.0])).numpy()[0] == 0.0
        assert abs(F.gelu(Tensor([10.0])).numpy()[0] - 10.0) < 1e-4

    def test_gelu_matches_gaussian_cdf(self):
        from scipy.stats import norm

        x = np.linspace(-3, 3, 41)
        expected = x * norm.cdf(x)
        np.testing.assert_allclose(F.gelu(Tensor(x)).numpy(), expected,
                                   atol=1e-12)


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = Tensor(np.full((2, 5), 7.0))
        out = F.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.numpy(), np.zeros((2, 5)), atol=1e-3)

    def test_two_point_row(self):
        out = F.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)),
                           Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.numpy(), [[1.0, -1.0]], atol=1e-4)

    def test_beta_shifts_mean(self, rng):
        x = Tensor(rng.standard_normal((4, 6)))
        out = F.layer_norm(x, Tensor(np.ones(6)), Tensor(np.full(6, 5.0)))
        np.testing.assert_allclose(out.numpy().mean(axis=-1),
                                   np.full(4, 5.0), atol=1e-4)


class TestConv2d:
    def test_pointwise_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
        w = Tensor(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1))
        out = F.conv2d(x, w, None, padding=0)
        np.testing.assert_allclose(out.numpy(), x.numpy(), rtol=1e-6)

    def test_depthwise_delta_kernel_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
        w = np.zeros((4, 1, 3, 3), dtype=np.float32)
        w[:, 0, 1, 1] = 1.0
        out = F.conv2d(x, Tensor(w), None, groups=4, padding="same")
        np.testing.assert_allclose(out.numpy(), x.numpy(), rtol=1e-6)

    def test_dilated_depthwise_hand_sum(self):
        # 5x5 ramp image, 3x3 depthwise kernel with dilation 2: the center
        # output pixel sums the four corners and center of the full image.
        img = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        w = np.ones((1, 1, 3, 3), dtype=np.float64)
        out = F.conv2d(Tensor(img), Tensor(w), None, dilation=2,
                       groups=1, padding="same")
        expected_center = img[0, 0][::2, ::2].sum()  # taps at 0,2,4
        assert out.numpy()[0, 0, 2, 2] == pytest.approx(expected_center)

    def test_output_size_formula(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 17, 13)).astype(np.float32))
        w = Tensor(rng.standard_normal((5, 3, 3, 3)).astype(np.float32))
        out = F.conv2d(x, w, None, stride=2, padding=1)
        expect = ((17 + 2 - 2 - 1) // 2 + 1, (13 + 2 - 2 - 1) // 2 + 1)
        assert out.shape[-2:] == expect

    def test_kernel_larger_than_input_rejected(self):
        x = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 7, 7), dtype=np.float32))
        with pytest.raises(ValueError, match="exceeds padded input"):
            F.conv2d(x, w, None, padding=0)

    def test_groups_must_divide(self):
        x = Tensor(np.zeros((1, 4, 5, 5), dtype=np.float32))
        w = Tensor(np.zeros((6, 2, 3, 3), dtype=np.float32))
        with pytest.raises(ValueError, match="groups"):
            F.conv2d(x, w, None, groups=3, padding="same")


class TestBatchNorm:
    def test_inference_uses_frozen_running_stats(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        rm = np.array([1.0, -1.0, 0.5])
        rv = np.array([4.0, 1.0, 0.25])
        out = F.batch_norm_2d(x, gamma, beta, rm, rv, training=False)
        expected = (x.numpy() - rm.reshape(1, 3, 1, 1)) / \
            np.sqrt(rv.reshape(1, 3, 1, 1) + 1e-5)
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-5)
        # and the buffers were not touched
        np.testing.assert_array_equal(rm, [1.0, -1.0, 0.5])

    def test_training_normalizes_batch(self, rng):
        x = Tensor(rng.standard_normal((4, 2, 5, 5)).astype(np.float64) * 3)
        out = F.batch_norm_2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                              np.zeros(2), np.ones(2), training=True)
        flat = out.numpy().transpose(1, 0, 2, 3).reshape(2, -1)
        np.testing.assert_allclose(flat.mean(1), [0, 0], atol=1e-10)
        np.testing.assert_allclose(flat.var(1), [1, 1], rtol=1e-4)
