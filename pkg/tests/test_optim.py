import numpy as np
import pytest

from cmfusion.errors import GradientError
from cmfusion.gradcheck import finite_diff_check
from cmfusion.optim import AdamState, adam_step
from cmfusion.tensor import Tensor, backward, cross_entropy, mul, tsum


def test_zero_gradient_leaves_params_unchanged():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    state = AdamState([p], learning_rate=1e-4)
    state.zero_grad()
    state.step()
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])


def test_first_step_matches_hand_evaluation():
    # p=1, g=1: m_hat = v_hat = 1 after bias correction, so
    # p <- 1 - lr / (1 + eps)
    lr, eps = 1e-4, 1e-8
    p = Tensor([1.0], requires_grad=True)
    p.grad[...] = 1.0
    state = AdamState([p], learning_rate=lr, epsilon=eps)
    state.step()
    expected = 1.0 - lr * 1.0 / (np.sqrt(1.0) + eps)
    assert abs(p.data[0] - expected) < 1e-18
    assert abs(p.data[0] - (1.0 - lr)) < 1e-11


def test_step_count_increments_by_one():
    p = Tensor([0.5], requires_grad=True)
    state = AdamState([p])
    p.grad[...] = 0.3
    before = state.step_count
    adam_step([p], state)
    assert state.step_count == before + 1


def test_missing_grad_rejected():
    p = Tensor([1.0], requires_grad=True)
    p.grad = None
    state = AdamState([p])
    with pytest.raises(GradientError):
        state.step()


def test_adam_descends_on_quadratic():
    p = Tensor([3.0, -2.0], requires_grad=True)
    state = AdamState([p], learning_rate=0.05)
    for _ in range(300):
        state.zero_grad()
        backward(tsum(mul(p, p)))
        state.step()
    assert np.abs(p.data).max() < 0.2


class TestFiniteDiffCheck:
    def test_linear_function_is_exact(self):
        p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        assert finite_diff_check(lambda: tsum(p), [p]) < 1e-10

    def test_cross_entropy_of_random_logits(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        labels = rng.integers(0, 2, 2)
        assert finite_diff_check(lambda: cross_entropy(logits, labels), [logits]) < 1e-6

    def test_non_finite_function_reports_coordinate(self):
        p = Tensor([1.0, 1e160], requires_grad=True)

        def f():
            return tsum(mul(p, p))  # overflows to inf when coordinate 1 is perturbed

        with pytest.raises(GradientError):
            finite_diff_check(f, {"p": p})

    def test_sampled_coordinates_stay_deterministic(self):
        rng1 = np.random.default_rng(7)
        rng2 = np.random.default_rng(7)
        p = Tensor(np.linspace(-1, 1, 50), requires_grad=True)
        f = lambda: tsum(mul(p, p))
        e1 = finite_diff_check(f, [p], max_coords_per_param=5, rng=rng1)
        e2 = finite_diff_check(f, [p], max_coords_per_param=5, rng=rng2)
        assert e1 == e2
