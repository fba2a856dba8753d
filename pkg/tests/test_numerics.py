"""Autodiff core and NN ops, checked against scalar-loop oracles and
finite differences."""

import numpy as np
import pytest

from gvtnet.gradcheck import grad_check
from gvtnet.ops import (
    conv2d,
    depthwise_conv2d,
    depthwise_separable_conv,
    gelu,
    layer_norm,
    pixel_shuffle,
    pixel_unshuffle,
    softmax_lastdim,
    take_rows,
)
from gvtnet.tensor import ShapeError, Tensor


def conv2d_oracle(x, w, b=None, stride=1, pad=0):
    """Direct quadruple-loop cross-correlation. Slow and obviously right."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + k,
                               j * stride:j * stride + k]
                    out[ni, oi, i, j] = np.sum(patch * w[oi])
            if b is not None:
                out[ni, oi] += b[oi]
    return out


class TestTensorBasics:
    def test_add_broadcast_grad(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.array([10.0, 20.0, 30.0]), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.full(3, 2.0))

    def test_mul_grad(self):
        a = Tensor([2.0, 3.0], requires_grad=True)
        b = Tensor([5.0, 7.0], requires_grad=True)
        (a * b).sum().backward()
        np.testing.assert_array_equal(a.grad, [5.0, 7.0])
        np.testing.assert_array_equal(b.grad, [2.0, 3.0])

    def test_div_and_rdiv(self):
        a = Tensor([4.0], requires_grad=True)
        (a / 2.0).sum().backward()
        np.testing.assert_allclose(a.grad, [0.5])
        a.grad = None
        (2.0 / a).sum().backward()
        np.testing.assert_allclose(a.grad, [-2.0 / 16.0])

    def test_pow_grad(self):
        a = Tensor([3.0], requires_grad=True)
        (a ** 3).sum().backward()
        np.testing.assert_allclose(a.grad, [27.0])

    def test_abs_subgradient_zero_at_zero(self):
        a = Tensor([-2.0, 0.0, 5.0], requires_grad=True)
        a.abs().sum().backward()
        np.testing.assert_array_equal(a.grad, [-1.0, 0.0, 1.0])

    def test_matmul_matches_numpy(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4, 5)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
        out = a @ b
        np.testing.assert_allclose(out.data, a.data @ b.data, rtol=1e-12)

    def test_matmul_inner_mismatch_raises(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.ones((4, 2)))
        with pytest.raises(ShapeError):
            a @ b

    def test_backward_needs_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (a * 2).backward()

    def test_grad_accumulates_across_reuse(self):
        a = Tensor([1.5], requires_grad=True)
        ((a * a) + a).sum().backward()
        np.testing.assert_allclose(a.grad, [2 * 1.5 + 1])

    def test_getitem_scatter(self):
        a = Tensor(np.arange(10.0), requires_grad=True)
        a[2:5].sum().backward()
        expect = np.zeros(10)
        expect[2:5] = 1.0
        np.testing.assert_array_equal(a.grad, expect)

    def test_roll_inverts_in_backward(self):
        a = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        w = Tensor(np.arange(12.0).reshape(3, 4))
        (a.roll((1, -2), (0, 1)) * w).sum().backward()
        np.testing.assert_array_equal(
            a.grad, np.roll(w.data, (-1, 2), (0, 1)))

    def test_deep_chain_no_recursion_error(self):
        a = Tensor([1.0], requires_grad=True)
        x = a
        for _ in range(5000):
            x = x + 1.0
        x.sum().backward()
        np.testing.assert_array_equal(a.grad, [1.0])

    def test_mean_axis_tuple(self):
        a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        a.mean(axis=(0, 2)).sum().backward()
        np.testing.assert_allclose(a.grad, np.full((2, 3, 4), 1.0 / 8.0))


class TestConv2d:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_forward_matches_oracle(self, stride, pad):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        np.testing.assert_allclose(
            got.data, conv2d_oracle(x, w, b, stride, pad), atol=1e-10)

    def test_1x1_is_channel_mix(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 5, 5))
        w = rng.standard_normal((2, 3, 1, 1))
        got = conv2d(Tensor(x), Tensor(w)).data
        expect = np.einsum("nchw,oc->nohw", x, w[:, :, 0, 0])
        np.testing.assert_allclose(got, expect, atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1)])
    def test_gradients(self, stride, pad):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((2, 3, 7, 7)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        tgt = rng.standard_normal((1,))[0]

        def loss():
            y = conv2d(x, w, b, stride=stride, pad=pad)
            return ((y - tgt) ** 2).mean()

        rep = grad_check(loss, [("x", x), ("w", w), ("b", b)], seed=3)
        assert rep.passed, rep.summary()

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 5, 3, 3))))

    def test_kernel_too_large_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))


class TestDepthwise:
    def test_matches_grouped_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 6, 6))
        w = rng.standard_normal((4, 1, 3, 3))
        got = depthwise_conv2d(Tensor(x), Tensor(w), pad=1).data
        expect = np.zeros_like(x)
        for c in range(4):
            expect[:, c:c + 1] = conv2d_oracle(
                x[:, c:c + 1], w[c:c + 1], stride=1, pad=1)
        np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 1, 3, 3)), requires_grad=True)

        def loss():
            return (depthwise_conv2d(x, w, pad=1) ** 2).mean()

        rep = grad_check(loss, [("x", x), ("w", w)], seed=1)
        assert rep.passed, rep.summary()

    def test_separable_is_depthwise_then_pointwise(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 4, 6, 6))
        dw = rng.standard_normal((4, 1, 3, 3))
        pw = rng.standard_normal((6, 4, 1, 1))
        b = rng.standard_normal(6)
        got = depthwise_separable_conv(
            Tensor(x), Tensor(dw), Tensor(pw), Tensor(b)).data
        mid = depthwise_conv2d(Tensor(x), Tensor(dw), pad=1).data
        expect = conv2d_oracle(mid, pw, b)
        np.testing.assert_allclose(got, expect, atol=1e-10)
        assert got.shape == (1, 6, 6, 6)


class TestLayerNorm:
    def test_closed_form(self):
        # mean 2, variance 2/3: (x - 2) * sqrt(3/2) up to eps.
        x = Tensor(np.array([[1.0, 2.0, 3.0]]))
        g = Tensor(np.ones(3))
        b = Tensor(np.zeros(3))
        out = layer_norm(x, g, b, eps=0.0).data
        root = np.sqrt(1.5)
        np.testing.assert_allclose(out, [[-root, 0.0, root]], atol=1e-12)

    def test_normalizes_channel_axis(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((2, 8, 4, 4)))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        out = layer_norm(x, g, b, axis=1).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_gradients(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        g = Tensor(rng.standard_normal(6), requires_grad=True)
        b = Tensor(rng.standard_normal(6), requires_grad=True)
        tgt = Tensor(rng.standard_normal((3, 6)))

        def loss():
            return ((layer_norm(x, g, b) - tgt) ** 2).mean()

        rep = grad_check(loss, [("x", x), ("g", g), ("b", b)], seed=5)
        assert rep.passed, rep.summary()


class TestSoftmax:
    def test_known_values(self):
        x = Tensor(np.array([0.0, np.log(3.0)]))
        np.testing.assert_allclose(
            softmax_lastdim(x).data, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 7))
        y = softmax_lastdim(Tensor(x)).data
        np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-12)
        y2 = softmax_lastdim(Tensor(x + 123.0)).data
        np.testing.assert_allclose(y, y2, atol=1e-12)

    def test_extreme_logits_stable(self):
        y = softmax_lastdim(Tensor(np.array([1000.0, 0.0, -1000.0]))).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y.sum(), 1.0)

    def test_gradients(self):
        rng = np.random.default_rng(19)
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 5)))

        def loss():
            return (softmax_lastdim(x) * w).sum()

        rep = grad_check(loss, [("x", x)], seed=7)
        assert rep.passed, rep.summary()


class TestGelu:
    def test_fixed_points(self):
        y = gelu(Tensor(np.array([0.0]))).data
        np.testing.assert_allclose(y, [0.0], atol=1e-15)
        # tanh-approximation value at 1.0
        y1 = gelu(Tensor(np.array([1.0]))).item()
        c = np.sqrt(2 / np.pi) * (1 + 0.044715)
        np.testing.assert_allclose(y1, 0.5 * (1 + np.tanh(c)), atol=1e-12)

    def test_asymptotes(self):
        y = gelu(Tensor(np.array([-20.0, 20.0]))).data
        np.testing.assert_allclose(y, [0.0, 20.0], atol=1e-8)

    def test_gradients(self):
        rng = np.random.default_rng(23)
        x = Tensor(rng.standard_normal(16), requires_grad=True)

        def loss():
            return gelu(x).sum()

        rep = grad_check(loss, [("x", x)], seed=9)
        assert rep.passed, rep.summary()


class TestPixelShuffle:
    def test_2x2_layout(self):
        # channels (a, b, c, d) -> [[a, b], [c, d]] in each cell
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        y = pixel_shuffle(x, 2).data
        np.testing.assert_array_equal(y[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_round_trip(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 12, 3, 5))
        back = pixel_unshuffle(pixel_shuffle(Tensor(x), 2), 2).data
        np.testing.assert_array_equal(back, x)

    def test_indivisible_raises(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(Tensor(np.ones((1, 3, 2, 2))), 2)

    def test_grad_is_inverse_permutation(self):
        x = Tensor(np.arange(16.0).reshape(1, 4, 2, 2), requires_grad=True)
        w = np.arange(16.0).reshape(1, 1, 4, 4)
        (pixel_shuffle(x, 2) * Tensor(w)).sum().backward()
        expect = pixel_unshuffle(Tensor(w), 2).data
        np.testing.assert_array_equal(x.grad, expect)


class TestTakeRows:
    def test_gather_and_scatter(self):
        t = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
        idx = np.array([0, 2, 2])
        out = take_rows(t, idx)
        np.testing.assert_array_equal(out.data, t.data[idx])
        out.sum().backward()
        expect = np.zeros((4, 3))
        expect[0] = 1.0
        expect[2] = 2.0
        np.testing.assert_array_equal(t.grad, expect)
