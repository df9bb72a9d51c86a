"""Tensor engine: op semantics against independent oracles, plus autograd."""

import numpy as np
import pytest

from unreflect.errors import ShapeError
from unreflect.rng import SplitMix64
from unreflect.tensor import (
    Parameter,
    Tensor,
    absolute,
    backward,
    conv2d,
    forward_diff,
    grad_check,
    linear,
    mean_all,
    mean_hw,
    mul,
    no_grad,
    pixel_shuffle,
    pixel_unshuffle,
    resample,
    sigmoid,
    silu,
    slice_channels,
    square,
    sub,
    sum_all,
)
from conftest import rel_linf


def conv2d_loop_reference(x, w, b, stride, padding):
    """Direct nested-loop convolution; the oracle conv2d must match."""
    bs, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((bs, cout, ho, wo), dtype=np.float64)
    for n in range(bs):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += float(xp[n, c, i * stride + ki, j * stride + kj]) * float(w[o, c, ki, kj])
                    out[n, o, i, j] = acc + float(b[o])
    return out


class TestConv2d:
    def test_all_ones_sums_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        out = conv2d(x, w, b, stride=1, padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_identity_kernel(self, np_rng):
        x = Tensor(np_rng.rand(2, 3, 5, 7).astype(np.float32))
        w = Tensor(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1))
        b = Tensor(np.zeros(3, dtype=np.float32))
        out = conv2d(x, w, b)
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_loop_oracle_strided(self, np_rng):
        x = np_rng.uniform(-1, 1, (1, 2, 5, 5)).astype(np.float32)
        w = np_rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32)
        b = np_rng.uniform(-1, 1, 3).astype(np.float32)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        ref = conv2d_loop_reference(x, w, b, stride=2, padding=1)
        assert out.shape == ref.shape
        assert np.abs(out.data - ref).max() < 1e-5

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
    def test_matches_loop_oracle_configs(self, np_rng, stride, padding):
        x = np_rng.uniform(-1, 1, (2, 3, 8, 6)).astype(np.float32)
        w = np_rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32)
        b = np_rng.uniform(-1, 1, 4).astype(np.float32)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        ref = conv2d_loop_reference(x, w, b, stride, padding)
        assert np.abs(out.data - ref).max() < 1e-5

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((2, 2, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError, match="axis 1"):
            conv2d(x, w, None, 1, 1)

    def test_too_small_input_is_an_error(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 5, 5), dtype=np.float32))
        with pytest.raises(ShapeError, match="axes 2,3"):
            conv2d(x, w, None, 1, 0)

    def test_bias_linearity(self, np_rng):
        """Adding d to one bias channel adds d * H_out * W_out to that
        channel's sum, per sample."""
        x = Tensor(np_rng.rand(2, 2, 9, 9).astype(np.float64))
        w = Tensor(np_rng.rand(3, 2, 3, 3).astype(np.float64))
        b0 = np_rng.rand(3).astype(np.float64)
        delta = 0.37
        out0 = conv2d(x, Tensor(w.data), Tensor(b0), 2, 1)
        b1 = b0.copy()
        b1[1] += delta
        out1 = conv2d(x, Tensor(w.data), Tensor(b1), 2, 1)
        _, _, ho, wo = out0.shape
        per_sample0 = out0.data.sum(axis=(2, 3))
        per_sample1 = out1.data.sum(axis=(2, 3))
        np.testing.assert_allclose(per_sample1[:, 1] - per_sample0[:, 1], delta * ho * wo, rtol=1e-12)
        np.testing.assert_allclose(per_sample1[:, 0], per_sample0[:, 0], rtol=1e-12)


class TestPixelShuffle:
    def test_declared_ordering_2x2(self):
        vals = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 4, 1, 1)
        out = pixel_shuffle(Tensor(vals), 2)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_r1_is_identity(self, np_rng):
        x = np_rng.rand(2, 3, 4, 4).astype(np.float32)
        np.testing.assert_array_equal(pixel_shuffle(Tensor(x), 1).data, x)
        np.testing.assert_array_equal(pixel_unshuffle(Tensor(x), 1).data, x)

    def test_roundtrip_bit_exact(self, np_rng):
        x = np_rng.rand(2, 8, 3, 3).astype(np.float32)
        back = pixel_unshuffle(pixel_shuffle(Tensor(x), 2), 2)
        np.testing.assert_array_equal(back.data, x)

    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_roundtrip_both_ways(self, np_rng, r):
        x = np_rng.rand(1, 2 * r * r, 5, 4).astype(np.float32)
        np.testing.assert_array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), r), r).data, x)
        y = np_rng.rand(1, 1, 4 * r, 2 * r).astype(np.float32)
        np.testing.assert_array_equal(pixel_shuffle(pixel_unshuffle(Tensor(y), r), r).data, y)

    def test_unshuffle_shape(self, np_rng):
        x = np_rng.rand(1, 1, 4, 4).astype(np.float32)
        out = pixel_unshuffle(Tensor(x), 2)
        assert out.shape == (1, 4, 2, 2)

    def test_indivisible_errors(self):
        with pytest.raises(ShapeError, match="not divisible"):
            pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2), dtype=np.float32)), 2)
        with pytest.raises(ShapeError, match="not divisible"):
            pixel_unshuffle(Tensor(np.zeros((1, 3, 3, 2), dtype=np.float32)), 2)


class TestResample:
    def test_constant_stays_constant(self):
        x = Tensor(np.full((1, 2, 4, 4), 0.7, dtype=np.float32))
        up = resample(x, 2)
        down = resample(x, 0.5)
        assert up.shape == (1, 2, 8, 8) and np.all(up.data == np.float32(0.7))
        assert down.shape == (1, 2, 2, 2) and np.all(down.data == np.float32(0.7))

    def test_upsample_repeats_blocks(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2))
        out = resample(x, 2)
        expect = np.array([
            [1, 1, 2, 2],
            [1, 1, 2, 2],
            [3, 3, 4, 4],
            [3, 3, 4, 4],
        ], dtype=np.float32)
        np.testing.assert_array_equal(out.data[0, 0], expect)

    def test_down_then_up_fixed_point_on_blockwise_constant(self, np_rng):
        coarse = np_rng.rand(1, 1, 3, 2).astype(np.float32)
        x = np.repeat(np.repeat(coarse, 2, axis=2), 2, axis=3)
        back = resample(resample(Tensor(x), 0.5), 2)
        np.testing.assert_array_equal(back.data, x)

    def test_bad_scale_errors(self):
        with pytest.raises(ShapeError, match="unsupported scale"):
            resample(Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32)), 3)
        with pytest.raises(ShapeError, match="even"):
            resample(Tensor(np.zeros((1, 1, 3, 4), dtype=np.float32)), 0.5)


class TestBackward:
    def test_sum_gives_ones(self):
        p = Parameter("p", np.arange(6, dtype=np.float32).reshape(2, 3))
        backward(sum_all(p.tensor))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3), dtype=np.float32))

    def test_half_sum_of_squares_gives_values(self, np_rng):
        vals = np_rng.rand(4, 3).astype(np.float64)
        p = Parameter("p", vals)
        backward(sum_all(square(p.tensor)) * 0.5)
        np.testing.assert_allclose(p.grad, vals, rtol=1e-12)

    def test_repeated_backward_accumulates(self):
        p = Parameter("p", np.ones(3, dtype=np.float32))
        loss = sum_all(p.tensor)
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(p.grad, 2 * np.ones(3, dtype=np.float32))

    def test_non_scalar_loss_rejected(self):
        p = Parameter("p", np.ones(3, dtype=np.float32))
        with pytest.raises(ShapeError, match="scalar"):
            backward(p.tensor * 2.0)

    def test_no_grad_blocks_graph(self):
        p = Parameter("p", np.ones(3, dtype=np.float32))
        with no_grad():
            out = sum_all(square(p.tensor))
        assert out._vjp is None and not out.requires_grad

    def test_broadcast_add_unbroadcasts(self, np_rng):
        a = Parameter("a", np_rng.rand(2, 3, 4, 4).astype(np.float64))
        b = Parameter("b", np_rng.rand(1, 3, 1, 1).astype(np.float64))
        backward(sum_all(mul(a.tensor, b.tensor)))
        np.testing.assert_allclose(b.grad, a.data.sum(axis=(0, 2, 3)).reshape(1, 3, 1, 1), rtol=1e-12)
        np.testing.assert_allclose(a.grad, np.broadcast_to(b.data, a.shape), rtol=1e-12)


class TestGradCheck:
    def test_linear_map_is_exact(self):
        p = Parameter("p", np.linspace(-1, 1, 10).astype(np.float64))
        err = grad_check(lambda: sum_all(p.tensor), [p], eps=1e-3, samples_per_param=5)
        assert err < 1e-10

    def test_quadratic(self):
        p = Parameter("p", np.linspace(0.3, 2.0, 8).astype(np.float64))
        err = grad_check(lambda: mean_all(square(p.tensor)), [p], eps=1e-4, samples_per_param=5)
        assert err < 1e-8

    @pytest.mark.parametrize("op", [sigmoid, silu, absolute, square])
    def test_elementwise_ops(self, np_rng, op):
        p = Parameter("p", np_rng.uniform(0.2, 1.5, (3, 4)).astype(np.float64))
        err = grad_check(lambda: mean_all(op(p.tensor)), [p], eps=1e-4, samples_per_param=4)
        assert err < 1e-6

    def test_conv_linear_pool_chain(self, np_rng):
        w = Parameter("w", np_rng.uniform(-0.5, 0.5, (4, 2, 3, 3)).astype(np.float64))
        b = Parameter("b", np_rng.uniform(-0.5, 0.5, 4).astype(np.float64))
        lw = Parameter("lw", np_rng.uniform(-0.5, 0.5, (4, 2)).astype(np.float64))
        lb = Parameter("lb", np_rng.uniform(-0.5, 0.5, 2).astype(np.float64))
        x = Tensor(np_rng.rand(2, 2, 6, 6))

        def f():
            h = silu(conv2d(x, w.tensor, b.tensor, stride=2, padding=1))
            return mean_all(square(linear(mean_hw(h), lw.tensor, lb.tensor)))

        err = grad_check(f, [w, b, lw, lb], eps=1e-4, samples_per_param=4)
        assert err < 1e-6

    def test_shuffle_and_resample_graph(self, np_rng):
        """Composition containing pixel_shuffle and resample stays below 1e-4."""
        p = Parameter("p", np_rng.uniform(-1, 1, (1, 8, 4, 4)).astype(np.float64))

        def f():
            h = pixel_shuffle(p.tensor, 2)
            h = resample(h, 2)
            h = resample(h, 0.5)
            h = pixel_unshuffle(h, 2)
            return mean_all(square(h))

        err = grad_check(f, [p], eps=1e-3, samples_per_param=6)
        assert err < 1e-4

    def test_slice_and_diff_ops(self, np_rng):
        p = Parameter("p", np_rng.uniform(-1, 1, (1, 6, 5, 5)).astype(np.float64))

        def f():
            a = slice_channels(p.tensor, 0, 3)
            b = slice_channels(p.tensor, 3, 6)
            return mean_all(square(forward_diff(sub(a, b), 2))) + mean_all(absolute(forward_diff(a, 3)))

        err = grad_check(f, [p], eps=1e-4, samples_per_param=8)
        assert err < 1e-5

    def test_non_finite_raises(self):
        p = Parameter("p", np.array([1.0, np.inf]))
        with pytest.raises(FloatingPointError):
            grad_check(lambda: sum_all(p.tensor), [p])


class TestFiniteness:
    def test_check_finite_passes_and_fails(self):
        Tensor(np.ones(3)).check_finite()
        with pytest.raises(FloatingPointError, match="non-finite"):
            Tensor(np.array([1.0, np.nan])).check_finite("bad")


class TestSplitMix:
    def test_scalar_and_batch_streams_agree(self):
        a = SplitMix64(123)
        b = SplitMix64(123)
        scalars = [a.next_uint64() for _ in range(5)]
        batch = b.uint64(5)
        assert scalars == [int(v) for v in batch]

    def test_uniform_range(self):
        rng = SplitMix64(7)
        vals = rng.uniform(-2.0, 3.0, (1000,))
        assert vals.min() >= -2.0 and vals.max() < 3.0

    def test_shuffle_deterministic(self):
        r1, r2 = SplitMix64(9), SplitMix64(9)
        a, b = list(range(20)), list(range(20))
        r1.shuffle(a)
        r2.shuffle(b)
        assert a == b and a != list(range(20))
