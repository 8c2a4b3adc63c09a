"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import GradientError, ValidationError
from .tensor import Tensor, backward


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor] | Mapping[str, Tensor],
                      eps: float = 1e-5, max_coords_per_param: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a deterministic zero-argument callable that evaluates the loss
    from the current parameter values; ``params`` are the tensors to check.
    Large parameters can be spot-checked on ``max_coords_per_param`` sampled
    coordinates (seeded via ``rng``); by default every coordinate is checked.
    """
    return max(finite_diff_report(f, params, eps, max_coords_per_param, rng).values(),
               default=0.0)


def finite_diff_report(f: Callable[[], Tensor], params, eps: float = 1e-5,
                       max_coords_per_param: int | None = None,
                       rng: np.random.Generator | None = None) -> dict[str, float]:
    """Per-parameter max relative error (keys are names or list indices)."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if isinstance(params, Mapping):
        named = list(params.items())
    else:
        named = [(str(i), p) for i, p in enumerate(params)]
    if rng is None:
        rng = np.random.default_rng(0)

    for _, p in named:
        p.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ValidationError("finite_diff_check needs a scalar function")
    if not loss.is_finite():
        raise GradientError("function value is non-finite at the base point")
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in named}

    # numeric evaluations only need values, so run them without the tape
    flags = [(p, p.requires_grad) for _, p in named]
    for p, _ in flags:
        p.requires_grad = False
    try:
        report: dict[str, float] = {}
        for name, p in named:
            flat = p.data.reshape(-1)
            grad_flat = analytic[name].reshape(-1)
            n = flat.shape[0]
            if max_coords_per_param is not None and n > max_coords_per_param:
                coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
            else:
                coords = np.arange(n)
            worst = 0.0
            for idx in coords:
                original = flat[idx]
                flat[idx] = original + eps
                f_plus = f().item()
                flat[idx] = original - eps
                f_minus = f().item()
                flat[idx] = original
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise GradientError(
                        f"non-finite function value while perturbing {name}[{int(idx)}]"
                    )
                numeric = (f_plus - f_minus) / (2.0 * eps)
                worst = max(worst, relative_error(grad_flat[idx], numeric))
            report[name] = worst
    finally:
        for p, was in flags:
            p.requires_grad = was
    return report
