import numpy as np
import pytest

from cmfusion.attention import TemporalConvParams, cross_attend, temporal_conv
from cmfusion.errors import DimensionError, ValidationError
from cmfusion.gradcheck import finite_diff_check
from cmfusion.seeding import substream
from cmfusion.tensor import Tensor, mul, tsum


def make_conv(c_in=3, k=3, seed=0):
    return TemporalConvParams.create(substream(seed, "conv"), c_in, k)


class TestTemporalConv:
    def test_zero_kernel_constant_bias(self):
        params = make_conv(c_in=4)
        params.kernel.data[...] = 0.0
        params.bias.data[...] = 5.0
        out = temporal_conv(np.random.default_rng(0).standard_normal((6, 4)), params)
        assert np.allclose(out.data, np.full((6, 1), 5.0))

    def test_k1_all_ones_kernel_sums_rows(self):
        params = TemporalConvParams(kernel=Tensor(np.ones((2, 1))), bias=Tensor(0.0))
        out = temporal_conv(np.array([[1.0, 2.0], [3.0, 4.0]]), params)
        assert np.array_equal(out.data.ravel(), [3.0, 7.0])

    def test_k3_hand_convolution_with_padding(self):
        params = TemporalConvParams(kernel=Tensor(np.ones((1, 3))), bias=Tensor(0.0))
        out = temporal_conv(np.array([[1.0], [2.0], [3.0]]), params)
        assert np.array_equal(out.data.ravel(), [3.0, 6.0, 5.0])

    def test_channel_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            temporal_conv(np.zeros((5, 4)), make_conv(c_in=3))

    def test_shift_equivariance_away_from_padding(self):
        params = make_conv(c_in=2, k=3, seed=1)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((10, 2))
        shifted = np.roll(x, 2, axis=0)
        a = temporal_conv(x, params).data.ravel()
        b = temporal_conv(shifted, params).data.ravel()
        # interior outputs shift with the input; only pad-adjacent rows differ
        assert np.allclose(a[1:7], b[3:9], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        params = make_conv(c_in=3, k=3, seed=2)
        x = Tensor(np.random.default_rng(2).standard_normal((8, 3)), requires_grad=True)
        named = dict(params.named("conv"), x=x)
        out = lambda: tsum(mul(temporal_conv(x, params), temporal_conv(x, params)))
        assert finite_diff_check(out, named) < 1e-4

    def test_batched_equals_per_sample(self):
        params = make_conv(c_in=3, k=5, seed=3)
        batch = np.random.default_rng(3).standard_normal((4, 7, 3))
        batched = temporal_conv(batch, params).data
        for b in range(4):
            assert np.allclose(batched[b], temporal_conv(batch[b], params).data)


class TestCrossAttend:
    def test_zero_conv_params_give_exact_1p5_gain(self):
        conv_v, conv_a = make_conv(), make_conv(seed=1)
        for p in (conv_v, conv_a):
            p.kernel.data[...] = 0.0
            p.bias.data[...] = 0.0
        rng = np.random.default_rng(4)
        fv = rng.standard_normal((6, 3))
        fa = rng.standard_normal((6, 3))
        out_v, out_a = cross_attend(fv, fa, conv_v, conv_a)
        assert np.array_equal(out_v.data, 1.5 * fv)
        assert np.array_equal(out_a.data, 1.5 * fa)

    def test_zero_audio_stream(self):
        conv_v, conv_a = make_conv(seed=2), make_conv(seed=3)
        conv_a.kernel.data[...] = 0.0
        conv_a.bias.data[...] = 0.0
        fv = np.random.default_rng(5).standard_normal((6, 3))
        fa = np.zeros((6, 3))
        out_v, out_a = cross_attend(fv, fa, conv_v, conv_a)
        assert np.array_equal(out_v.data, 1.5 * fv)   # gate from zero audio is 0.5
        assert np.array_equal(out_a.data, np.zeros((6, 3)))  # zero stream stays zero

    def test_saturated_gate_doubles_features(self):
        conv_v, conv_a = make_conv(seed=4), make_conv(seed=5)
        conv_a.kernel.data[...] = 0.0
        conv_a.bias.data[...] = 20.0  # sigmoid saturates to 1
        fv = np.abs(np.random.default_rng(6).standard_normal((6, 3)))
        out_v, _ = cross_attend(fv, np.zeros((6, 3)), conv_v, conv_a)
        assert np.abs(out_v.data - 2.0 * fv).max() < 1e-8

    @pytest.mark.parametrize("seed", range(100))
    def test_output_bound_for_nonnegative_features(self, seed):
        rng = np.random.default_rng(seed)
        conv_v = TemporalConvParams(
            kernel=Tensor(rng.standard_normal((3, 3))), bias=Tensor(rng.standard_normal(())))
        conv_a = TemporalConvParams(
            kernel=Tensor(rng.standard_normal((3, 3))), bias=Tensor(rng.standard_normal(())))
        fv = np.abs(rng.standard_normal((5, 3)))
        fa = rng.standard_normal((5, 3))
        out_v, _ = cross_attend(fv, fa, conv_v, conv_a)
        assert (out_v.data >= fv - 1e-12).all()
        assert (out_v.data <= 2.0 * fv + 1e-12).all()

    def test_shape_preserved(self):
        conv_v, conv_a = make_conv(seed=6), make_conv(seed=7)
        fv = np.zeros((9, 3))
        fa = np.ones((9, 3))
        out_v, out_a = cross_attend(fv, fa, conv_v, conv_a)
        assert out_v.shape == (9, 3) and out_a.shape == (9, 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            cross_attend(np.zeros((5, 3)), np.zeros((6, 3)), make_conv(), make_conv())

    def test_raw_gate_mode_skips_sigmoid(self):
        conv_v, conv_a = make_conv(seed=8), make_conv(seed=9)
        conv_a.kernel.data[...] = 0.0
        conv_a.bias.data[...] = 1.0
        fv = np.ones((4, 3))
        out_v, _ = cross_attend(fv, np.zeros((4, 3)), conv_v, conv_a, gate="raw")
        assert np.array_equal(out_v.data, 2.0 * fv)  # raw gate 1.0 + residual

    def test_gradients_through_both_conv_paths(self):
        conv_v, conv_a = make_conv(seed=10), make_conv(seed=11)
        rng = np.random.default_rng(8)
        fv = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        fa = Tensor(rng.standard_normal((6, 3)), requires_grad=True)

        def f():
            out_v, out_a = cross_attend(fv, fa, conv_v, conv_a)
            return tsum(mul(out_v, out_v)) + tsum(mul(out_a, out_a))

        named = dict(conv_v.named("cv"), **conv_a.named("ca"), fv=fv, fa=fa)
        assert finite_diff_check(f, named) < 1e-4
