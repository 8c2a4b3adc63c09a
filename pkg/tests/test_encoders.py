import numpy as np
import pytest

from cmfusion.encoders import (SequenceEncoderParams, TextEncoderParams,
                               encode_sequence, encode_text, lstm_forward)
from cmfusion.errors import DimensionError, ValidationError
from cmfusion.gradcheck import finite_diff_check
from cmfusion.seeding import substream
from cmfusion.tensor import Tensor, mul, tsum


def make_seq_params(seed=0, input_dim=5, hidden_dim=4, output_dim=3):
    return SequenceEncoderParams.create(substream(seed, "enc"), input_dim,
                                        hidden_dim, output_dim)


def zero_params(params):
    for p in vars(params).values():
        if isinstance(p, Tensor):
            p.data[...] = 0.0
    return params


def hand_lstm_cell(x, w_ih, w_hh, b, h_prev, c_prev):
    """Independent single-cell oracle written from the gate equations."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    a = w_ih @ x + w_hh @ h_prev + b
    h = h_prev.shape[0]
    i, f = sig(a[:h]), sig(a[h:2 * h])
    g, o = np.tanh(a[2 * h:3 * h]), sig(a[3 * h:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


class TestLstm:
    def test_zero_parameters_give_zero_hidden(self):
        params = zero_params(make_seq_params())
        out = lstm_forward(np.random.default_rng(0).standard_normal((9, 5)), params)
        assert np.array_equal(out.data, np.zeros((9, 4)))

    def test_single_step_matches_hand_cell(self):
        params = make_seq_params(seed=5, input_dim=3, hidden_dim=2)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(3)
        h, _ = hand_lstm_cell(x, params.w_ih.data, params.w_hh.data, params.bias.data,
                              np.zeros(2), np.zeros(2))
        out = lstm_forward(x[None, :], params)
        assert np.allclose(out.data[0], h, atol=1e-12)

    def test_two_steps_match_hand_recurrence(self):
        params = make_seq_params(seed=6, input_dim=3, hidden_dim=2)
        rng = np.random.default_rng(2)
        xs = rng.standard_normal((2, 3))
        h = c = np.zeros(2)
        for t in range(2):
            h, c = hand_lstm_cell(xs[t], params.w_ih.data, params.w_hh.data,
                                  params.bias.data, h, c)
        out = lstm_forward(xs, params)
        assert np.allclose(out.data[1], h, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_through_five_steps(self, seed):
        params = make_seq_params(seed=seed, input_dim=4, hidden_dim=3)
        seq = Tensor(np.random.default_rng(seed).standard_normal((5, 4)),
                     requires_grad=True)
        named = dict(params.named("lstm"), seq=seq)
        err = finite_diff_check(lambda: tsum(mul(lstm_forward(seq, params),
                                                 lstm_forward(seq, params))),
                                named)
        assert err < 1e-4

    def test_batched_equals_per_sample(self):
        params = make_seq_params(seed=7)
        rng = np.random.default_rng(3)
        batch = rng.standard_normal((3, 6, 5))
        batched = lstm_forward(batch, params).data
        for b in range(3):
            single = lstm_forward(batch[b], params).data
            assert np.allclose(batched[b], single, atol=1e-12)

    def test_width_mismatch_rejected(self):
        params = make_seq_params(input_dim=5)
        with pytest.raises(DimensionError):
            lstm_forward(np.zeros((4, 6)), params)

    def test_hidden_states_bounded_over_long_sequences(self):
        params = make_seq_params(seed=8, input_dim=2, hidden_dim=3)
        rng = np.random.default_rng(4)
        seq = rng.uniform(-10.0, 10.0, size=(100, 2))
        out = lstm_forward(seq, params)
        assert np.isfinite(out.data).all()
        assert np.abs(out.data).max() <= 1.0  # |h| = |o * tanh(c)| <= 1


class TestEncodeSequence:
    def test_zero_lstm_params_emit_projection_bias(self):
        params = zero_params(make_seq_params(input_dim=5, hidden_dim=4, output_dim=3))
        params.b_proj.data[...] = [0.5, -1.0, 2.0]
        out = encode_sequence(np.ones((100, 5)), params)
        assert np.allclose(out.data, np.tile([0.5, -1.0, 2.0], (100, 1)))

    def test_video_shape_contract(self):
        params = SequenceEncoderParams.create(substream(0, "v"), 768, 32, 64)
        out = encode_sequence(np.random.default_rng(0).standard_normal((100, 768)), params)
        assert out.shape == (100, 64)

    def test_rejects_wrong_length(self):
        params = make_seq_params()
        with pytest.raises(ValidationError):
            encode_sequence(np.zeros((99, 5)), params)

    def test_timestep_order_matters(self):
        params = make_seq_params(seed=9)
        rng = np.random.default_rng(5)
        seq = rng.standard_normal((100, 5))
        flipped = seq[::-1].copy()
        a = encode_sequence(seq, params).data
        b = encode_sequence(flipped, params).data
        assert not np.allclose(a, b)


class TestEncodeText:
    def test_zero_params_give_zero(self):
        params = zero_params(TextEncoderParams.create(substream(0, "t"), 8, (6, 5), 4))
        out = encode_text(np.ones(8), params)
        assert np.array_equal(out.data, np.zeros(4))

    def test_identity_slices_compose_at_width_4(self):
        # identity-like weights and zero biases make the MLP a projection
        # chain; ReLU is inert on non-negative values
        params = zero_params(TextEncoderParams.create(substream(0, "t"), 4, (4, 4), 4))
        for w in (params.w1, params.w2, params.w3):
            w.data[...] = np.eye(4)
        x = np.array([0.0, 1.0, 2.0, 3.0])
        out = encode_text(x, params)
        assert np.array_equal(out.data, x)

    def test_hand_composed_projection(self):
        # w1 keeps coords (0, 1), w2 swaps them, w3 doubles; all biases zero
        params = zero_params(TextEncoderParams.create(substream(0, "t"), 4, (2, 2), 2))
        params.w1.data[...] = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        params.w2.data[...] = np.array([[0.0, 1.0], [1.0, 0.0]])
        params.w3.data[...] = 2.0 * np.eye(2)
        out = encode_text(np.array([3.0, 5.0, 7.0, 9.0]), params)
        assert np.array_equal(out.data, [10.0, 6.0])

    def test_gradient_matches_finite_differences(self):
        params = TextEncoderParams.create(substream(1, "t"), 6, (5, 4), 3)
        x = np.random.default_rng(6).standard_normal(6)
        err = finite_diff_check(lambda: tsum(mul(encode_text(x, params),
                                                 encode_text(x, params))),
                                params.named("text"))
        assert err < 1e-4

    def test_positive_homogeneity_with_nonnegative_weights(self):
        params = TextEncoderParams.create(substream(2, "t"), 6, (5, 4), 3)
        for w in (params.w1, params.w2, params.w3):
            w.data[...] = np.abs(w.data)
        x = np.abs(np.random.default_rng(7).standard_normal(6))
        for alpha in (0.0, 0.5, 2.0):
            lhs = encode_text(alpha * x, params).data
            rhs = alpha * encode_text(x, params).data
            assert np.allclose(lhs, rhs, atol=1e-12)

    def test_width_mismatch_rejected(self):
        params = TextEncoderParams.create(substream(0, "t"), 8, (6, 5), 4)
        with pytest.raises(DimensionError):
            encode_text(np.zeros(7), params)
