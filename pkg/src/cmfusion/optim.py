"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import GradientError
from .tensor import Tensor


class AdamState:
    """Adam moment buffers and step counter for a fixed parameter list.

    Update rule (per parameter, after ``step_count`` increments):
        m <- beta1 m + (1 - beta1) g
        v <- beta2 v + (1 - beta2) g^2
        p <- p - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
    """

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Apply one Adam update using the gradients currently stored."""
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GradientError(f"parameter {i} has no gradient; run backward first")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """Functional entry point; ``params`` must match the state's list."""
    if params is not state.params and list(params) != state.params:
        raise GradientError("adam_step called with parameters not owned by this state")
    state.step()
