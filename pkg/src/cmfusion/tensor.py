"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the output tensor as they execute (dynamic
tape), so the recorded graph always matches the architecture variant that
actually ran.  ``backward`` walks the graph once per call and *adds* that
pass's gradients into each tracked tensor's ``grad`` buffer; call
``zero_grad`` explicitly between optimization steps.

Broadcasting in binary elementwise ops is restricted to a trailing
singleton dimension (``[T, 1] op [T, D]``) plus plain scalars; that is the
only pattern the model needs and it keeps every backward rule a one-liner.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GradientError, ValidationError

Array = np.ndarray

# broadcast modes for binary elementwise ops
_EQUAL, _A_TRAIL, _B_TRAIL, _A_SCALAR, _B_SCALAR = range(5)


class Tensor:
    """A float64 array plus optional gradient buffer and tape record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array, dict], None] | None = None

    @classmethod
    def _from_op(cls, data: Array, parents: Sequence["Tensor"],
                 backward: Callable[[Array, dict], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = True
        out.grad = None  # filled in when backward first reaches this node
        out._parents = tuple(parents)
        out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def assert_finite(self, context: str = "tensor") -> None:
        if not self.is_finite():
            raise ValidationError(f"{context} contains non-finite values")

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0
        elif self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- backward pass ----------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order over the tracked subgraph (every node after its parents)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(local: dict, node: Tensor, grad: Array, owned: bool) -> None:
    """Add a gradient contribution; ``owned`` marks arrays safe to keep."""
    if not node.requires_grad:
        return
    stored = local.get(id(node))
    if stored is None:
        local[id(node)] = grad if owned else grad.copy()
    else:
        stored += grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor.

    ``loss`` must hold a single element.  Each call contributes exactly one
    pass: calling twice on the same graph doubles the stored gradients.
    """
    if loss.size != 1:
        raise ValidationError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValidationError("loss is not connected to any tracked tensor")

    # per-pass gradient map keyed by id(); flushed into .grad afterwards so
    # repeated backward calls each contribute one clean pass
    local: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    order = _topo_order(loss)
    for node in reversed(order):
        grad = local.get(id(node))
        if grad is None or node._backward is None:
            continue
        node._backward(grad, local)
    for node in order:
        grad = local.get(id(node))
        if grad is None:
            continue
        if node.grad is None:
            node.grad = grad
        else:
            node.grad += grad


# -- shape helpers -----------------------------------------------------------


def _binary_mode(a: Array, b: Array) -> int:
    if a.shape == b.shape:
        return _EQUAL
    if a.ndim == 0 or a.size == 1 and a.ndim == 1:
        return _A_SCALAR
    if b.ndim == 0 or b.size == 1 and b.ndim == 1:
        return _B_SCALAR
    if a.ndim == b.ndim and a.shape[:-1] == b.shape[:-1]:
        if a.shape[-1] == 1:
            return _A_TRAIL
        if b.shape[-1] == 1:
            return _B_TRAIL
    raise DimensionError(
        f"shapes {a.shape} and {b.shape} are neither equal nor trailing-singleton broadcastable"
    )


def _reduce_grad(grad: Array, mode: int, side_a: bool, shape: tuple[int, ...]):
    """Reduce a full-shape gradient onto a broadcast operand. Returns (array, owned)."""
    if mode == _EQUAL or (side_a and mode == _B_TRAIL) or (side_a and mode == _B_SCALAR) \
            or (not side_a and mode in (_A_TRAIL, _A_SCALAR)):
        return grad, False
    if (side_a and mode == _A_TRAIL) or (not side_a and mode == _B_TRAIL):
        return grad.sum(axis=-1, keepdims=True), True
    # scalar side: collapse everything
    return np.asarray(grad.sum()).reshape(shape), True


# -- primitive operations -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a.data, b.data)
    data = a.data + b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        if a.requires_grad:
            _accumulate(local, a, *_reduce_grad(grad, mode, True, a.shape))
        if b.requires_grad:
            _accumulate(local, b, *_reduce_grad(grad, mode, False, b.shape))

    return Tensor._from_op(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a.data, b.data)
    data = a.data * b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        if a.requires_grad:
            arr, _ = _reduce_grad(grad * b.data, mode, True, a.shape)
            _accumulate(local, a, arr, True)
        if b.requires_grad:
            arr, _ = _reduce_grad(grad * a.data, mode, False, b.shape)
            _accumulate(local, b, arr, True)

    return Tensor._from_op(data, (a, b), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        _accumulate(local, x, grad * (1.0 - data * data), True)

    return Tensor._from_op(data, (x,), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    data = _sigmoid(x.data)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        _accumulate(local, x, grad * (data * (1.0 - data)), True)

    return Tensor._from_op(data, (x,), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        _accumulate(local, x, grad * (data > 0.0), True)

    return Tensor._from_op(data, (x,), bw)


_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
_ELEMENTWISE_BINARY = {"add": add, "mul": mul}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by name; kinds: add, mul (binary), tanh, sigmoid, relu (unary)."""
    if kind in _ELEMENTWISE_BINARY:
        if len(operands) != 2:
            raise ValidationError(f"elementwise '{kind}' takes 2 operands, got {len(operands)}")
        return _ELEMENTWISE_BINARY[kind](*operands)
    if kind in _ELEMENTWISE_UNARY:
        if len(operands) != 1:
            raise ValidationError(f"elementwise '{kind}' takes 1 operand, got {len(operands)}")
        return _ELEMENTWISE_UNARY[kind](operands[0])
    raise ValidationError(f"unknown elementwise kind '{kind}'")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    data = a.data @ b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        if a.requires_grad:
            _accumulate(local, a, grad @ b.data.T, True)
        if b.requires_grad:
            _accumulate(local, b, a.data.T @ grad, True)

    return Tensor._from_op(data, (a, b), bw)


def add_bias(x, b) -> Tensor:
    """Add a 1-D bias along the last axis of ``x``; backward sums over rows."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias shape {b.shape} does not match input {x.shape}")
    data = x.data + b.data
    if not (x.requires_grad or b.requires_grad):
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        if x.requires_grad:
            _accumulate(local, x, grad, False)
        if b.requires_grad:
            axes = tuple(range(grad.ndim - 1))
            if axes:
                _accumulate(local, b, grad.sum(axis=axes), True)
            else:
                _accumulate(local, b, grad, False)

    return Tensor._from_op(data, (x, b), bw)


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    data = np.asarray(x.data.sum())
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        _accumulate(local, x, np.broadcast_to(grad, x.shape).copy(), True)

    return Tensor._from_op(data, (x,), bw)


def mul_scalar(x, s) -> Tensor:
    """Multiply by a 1-element tensor (trainable scalar weight)."""
    x, s = as_tensor(x), as_tensor(s)
    if s.size != 1:
        raise DimensionError(f"mul_scalar expects a 1-element scale, got shape {s.shape}")
    return mul(x, s)


def mean_over_time(x) -> Tensor:
    """Mean over the second-to-last axis: [T, D] -> [D] or [B, T, D] -> [B, D]."""
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise DimensionError(f"mean_over_time needs rank >= 2, got shape {x.shape}")
    t_extent = x.shape[-2]
    data = x.data.mean(axis=-2)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        expanded = np.repeat(np.expand_dims(grad / t_extent, -2), t_extent, axis=-2)
        _accumulate(local, x, expanded, True)

    return Tensor._from_op(data, (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old_shape = x.shape
    data = x.data.reshape(shape)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        _accumulate(local, x, grad.reshape(old_shape), False)

    return Tensor._from_op(data, (x,), bw)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    x = as_tensor(x)
    if not (0 <= start < stop <= x.shape[-1]):
        raise DimensionError(f"slice [{start}:{stop}] out of range for shape {x.shape}")
    data = x.data[..., start:stop].copy()
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        full = np.zeros(x.shape)
        full[..., start:stop] = grad
        _accumulate(local, x, full, True)

    return Tensor._from_op(data, (x,), bw)


def concat_last(parts: Iterable) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValidationError("concat_last needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(f"concat_last leading dims differ: {parts[0].shape} vs {p.shape}")
    data = np.concatenate([p.data for p in parts], axis=-1)
    if not any(p.requires_grad for p in parts):
        return Tensor(data)
    widths = [p.shape[-1] for p in parts]

    def bw(grad: Array, local) -> None:
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(local, p, grad[..., offset:offset + w].copy(), True)
            offset += w

    return Tensor._from_op(data, tuple(parts), bw)


# -- softmax / cross-entropy ---------------------------------------------------


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x) -> Tensor:
    """Row-wise softmax computed with max-subtraction for stability."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_rows expects [m, c] with c >= 1, got {x.shape}")
    x.assert_finite("softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    if not x.requires_grad:
        return Tensor(data)

    def bw(grad: Array, local) -> None:
        dot = (grad * data).sum(axis=-1, keepdims=True)
        _accumulate(local, x, data * (grad - dot), True)

    return Tensor._from_op(data, (x,), bw)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of binary labels under softmax(logits).

    Gradient w.r.t. the logits is (softmax - onehot) / batch_size.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[-1] != 2:
        raise DimensionError(f"cross_entropy expects [m, 2] logits, got {logits.shape}")
    m = logits.shape[0]
    if m < 1 or labels.shape[0] != m:
        raise ValidationError(f"label count {labels.shape[0]} does not match batch {m}")
    if labels.min() < 0 or labels.max() > 1:
        raise ValidationError("labels must be 0 or 1")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(m), labels] - log_z
    data = np.asarray(-log_p.mean())
    if not logits.requires_grad:
        return Tensor(data)
    probs = np.exp(shifted - log_z[:, None])

    def bw(grad: Array, local) -> None:
        g = probs.copy()
        g[np.arange(m), labels] -= 1.0
        g *= float(grad) / m
        _accumulate(local, logits, g, True)

    return Tensor._from_op(data, (logits,), bw)


def check_finite_loss(loss: Tensor) -> Tensor:
    if not loss.is_finite():
        raise GradientError("loss is non-finite")
    return loss
