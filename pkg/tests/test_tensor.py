import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmfusion.errors import DimensionError, ValidationError
from cmfusion.gradcheck import finite_diff_check
from cmfusion.tensor import (Tensor, add, backward, cross_entropy, elementwise,
                             matmul, mul, softmax_rows, tsum)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[11.0]])

    def test_gradient_matches_hand_value(self):
        # d sum(a @ b) / da at a=[[1,2]], b=[[3],[4]] is [[3, 4]]
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]])
        backward(tsum(matmul(a, b)))
        assert np.allclose(a.grad, [[3.0, 4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 2\).*\(3, 1\)"):
            matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0], [2.0], [3.0]]))


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5

    def test_tanh_at_zero(self):
        assert elementwise("tanh", Tensor([0.0])).data[0] == 0.0

    def test_broadcast_trailing_singleton(self):
        out = elementwise("mul", Tensor([[2.0], [3.0]]), Tensor([[1.0, 1.0], [1.0, 1.0]]))
        assert np.array_equal(out.data, [[2.0, 2.0], [3.0, 3.0]])

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(DimensionError):
            add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            elementwise("pow", Tensor([1.0]))

    def test_relu(self):
        out = elementwise("relu", Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])


class TestBackward:
    def test_linear(self):
        p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(tsum(p))
        assert np.array_equal(p.grad, [1.0, 1.0, 1.0])

    def test_square(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(mul(p, p)))
        assert np.array_equal(p.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        loss = tsum(p)
        backward(loss)
        backward(loss)
        assert np.array_equal(p.grad, [2.0, 2.0, 2.0])

    def test_fanout_sums_both_consumers(self):
        # loss = sum(p) + sum(p*p) -> grad = 1 + 2p
        p = Tensor([1.0, 2.0], requires_grad=True)
        backward(add(tsum(p), tsum(mul(p, p))))
        assert np.array_equal(p.grad, [3.0, 5.0])

    def test_non_scalar_loss_rejected(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValidationError):
            backward(mul(p, p))

    def test_zero_grad_resets(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(p))
        p.zero_grad()
        assert np.array_equal(p.grad, [0.0, 0.0])


class TestSoftmax:
    def test_equal_logits(self):
        assert np.array_equal(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_stability_under_large_values(self):
        assert np.array_equal(softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])

    def test_closed_form(self):
        out = softmax_rows(Tensor([[math.log(2.0), 0.0]]))
        assert np.allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = softmax_rows(Tensor(rng.standard_normal((50, 7)) * 30.0))
        assert np.abs(out.data.sum(axis=1) - 1.0).max() <= 1e-9

    def test_shift_invariance_bitwise(self):
        # integer-valued logits and shifts are exact in float64, so the
        # max-subtraction scheme must reproduce identical bits
        rng = np.random.default_rng(1)
        x = rng.integers(-8, 8, size=(20, 4)).astype(np.float64)
        for c in (1.0, 64.0, 4096.0):
            assert np.array_equal(softmax_rows(Tensor(x)).data,
                                  softmax_rows(Tensor(x + c)).data)

    def test_non_finite_detected(self):
        with pytest.raises(ValidationError):
            softmax_rows(Tensor([[np.inf, 0.0]]))


class TestCrossEntropy:
    def test_uniform_prediction(self):
        loss = cross_entropy(Tensor([[0.0, 0.0]]), [0])
        assert abs(loss.item() - math.log(2.0)) < 1e-12

    def test_confident_correct(self):
        assert cross_entropy(Tensor([[20.0, -20.0]]), [0]).item() < 1e-8

    def test_gradient_is_softmax_minus_onehot(self):
        logits = Tensor([[0.0, 0.0]], requires_grad=True)
        backward(cross_entropy(logits, [0]))
        assert np.allclose(logits.grad, [[-0.5, 0.5]], atol=1e-12)

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValidationError):
            cross_entropy(Tensor([[0.0, 0.0]]), [2])

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_identity_on_random_logits(self, seed):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.standard_normal((6, 2)) * 3.0, requires_grad=True)
        labels = rng.integers(0, 2, 6)
        backward(cross_entropy(logits, labels))
        probs = softmax_rows(Tensor(logits.data)).data
        onehot = np.zeros((6, 2))
        onehot[np.arange(6), labels] = 1.0
        assert np.abs(logits.grad - (probs - onehot) / 6.0).max() <= 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_registered_op_gradients_match_finite_differences(seed):
    """Randomized gradient check through a composition of every registered op."""
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
    labels = rng.integers(0, 2, 3)

    def f():
        from cmfusion.tensor import relu, sigmoid, tanh
        y = matmul(a, b)                    # [3, 2]
        y = add(y, mul(c, Tensor(np.ones((3, 2)))))  # trailing-singleton broadcast
        y = add(tanh(y), mul(sigmoid(y), relu(y)))
        return cross_entropy(y, labels)

    assert finite_diff_check(f, [a, b, c]) < 1e-4


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 5),
       scale=st.floats(0.1, 50.0), seed=st.integers(0, 2**31))
def test_softmax_rows_always_normalized(rows, cols, scale, seed):
    rng = np.random.default_rng(seed)
    out = softmax_rows(Tensor(rng.standard_normal((rows, cols)) * scale))
    assert np.abs(out.data.sum(axis=1) - 1.0).max() <= 1e-9
    assert (out.data >= 0.0).all()
