"""Per-modality feature processing.

Sequence modalities (video, audio) run through an LSTM followed by a
per-timestep linear projection onto the shared fusion width.  Text runs
through a three-layer MLP with ReLU after the first two layers.

The LSTM records itself on the tape as a single fused operation whose
backward implements truncated-free BPTT over the cached gate activations;
composing it from primitive ops would put ~15 nodes per timestep on the
tape for no numerical benefit.  The analytic backward is validated against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Array, Tensor, _accumulate, add_bias, matmul, relu, reshape

SEQUENCE_LENGTH = 100  # frames / audio seconds per sample, fixed by the data layout
FUSION_WIDTH = 64


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        fan = shape[0] + 1
    else:
        fan = shape[0] + shape[1]
    limit = np.sqrt(6.0 / fan)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class SequenceEncoderParams:
    """LSTM gate weights plus the output projection.

    Gate blocks are ordered (input, forget, cell, output) along the 4h axis.
    """

    w_ih: Tensor  # [4h, d_in]
    w_hh: Tensor  # [4h, h]
    bias: Tensor  # [4h]
    w_proj: Tensor  # [h, D]
    b_proj: Tensor  # [D]

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hh.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w_proj.shape[1]

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int = 128,
               output_dim: int = FUSION_WIDTH) -> "SequenceEncoderParams":
        h = hidden_dim
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0  # forget-gate bias keeps early memory open
        return cls(
            w_ih=Tensor(_uniform_init(rng, (4 * h, input_dim)), requires_grad=True),
            w_hh=Tensor(_uniform_init(rng, (4 * h, h)), requires_grad=True),
            bias=Tensor(bias, requires_grad=True),
            w_proj=Tensor(_uniform_init(rng, (h, output_dim)), requires_grad=True),
            b_proj=Tensor(np.zeros(output_dim), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_ih": self.w_ih, f"{prefix}.w_hh": self.w_hh,
                f"{prefix}.bias": self.bias, f"{prefix}.w_proj": self.w_proj,
                f"{prefix}.b_proj": self.b_proj}


@dataclass
class TextEncoderParams:
    """Three stacked linear layers; ReLU after the first two only."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w3.shape[1]

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int = 768,
               hidden_dims: tuple[int, int] = (256, 128),
               output_dim: int = FUSION_WIDTH) -> "TextEncoderParams":
        h1, h2 = hidden_dims
        return cls(
            w1=Tensor(_uniform_init(rng, (input_dim, h1)), requires_grad=True),
            b1=Tensor(np.zeros(h1), requires_grad=True),
            w2=Tensor(_uniform_init(rng, (h1, h2)), requires_grad=True),
            b2=Tensor(np.zeros(h2), requires_grad=True),
            w3=Tensor(_uniform_init(rng, (h2, output_dim)), requires_grad=True),
            b3=Tensor(np.zeros(output_dim), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
                f"{prefix}.w3": self.w3, f"{prefix}.b3": self.b3}


def lstm_forward(seq, params: SequenceEncoderParams) -> Tensor:
    """Run the LSTM over ``seq`` ([T, d] or [B, T, d]); returns hidden states.

    Initial hidden and cell states are zero.  Gates use sigmoid, candidate
    and output use tanh.
    """
    if isinstance(seq, Tensor):
        x_in, track_input = seq, seq.requires_grad
        x = seq.data
    else:
        x_in, track_input = None, False
        x = np.asarray(seq, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"lstm_forward expects [T, d] or [B, T, d], got {x.shape}")
    batch, t_len, d = x.shape
    if t_len < 1:
        raise ValidationError("sequence length must be >= 1")
    if d != params.input_dim:
        raise DimensionError(
            f"input width {d} does not match encoder width {params.input_dim}"
        )
    h = params.hidden_dim
    w_ih, w_hh, bias = params.w_ih, params.w_hh, params.bias

    # one big GEMM for the input projections of every timestep
    flat = x.reshape(batch * t_len, d)
    gates_in = flat @ w_ih.data.T + bias.data
    gates_in = gates_in.reshape(batch, t_len, 4 * h)

    w_hh_t = np.ascontiguousarray(w_hh.data.T)
    gate_i = np.empty((t_len, batch, h))
    gate_f = np.empty((t_len, batch, h))
    gate_g = np.empty((t_len, batch, h))
    gate_o = np.empty((t_len, batch, h))
    cell = np.empty((t_len, batch, h))
    tanh_c = np.empty((t_len, batch, h))
    hidden = np.empty((t_len, batch, h))

    h_prev = np.zeros((batch, h))
    c_prev = np.zeros((batch, h))
    for t in range(t_len):
        a = gates_in[:, t, :] + h_prev @ w_hh_t
        gate_i[t] = _sig(a[:, :h])
        gate_f[t] = _sig(a[:, h:2 * h])
        gate_g[t] = np.tanh(a[:, 2 * h:3 * h])
        gate_o[t] = _sig(a[:, 3 * h:])
        cell[t] = gate_f[t] * c_prev + gate_i[t] * gate_g[t]
        tanh_c[t] = np.tanh(cell[t])
        hidden[t] = gate_o[t] * tanh_c[t]
        h_prev = hidden[t]
        c_prev = cell[t]

    out_data = np.ascontiguousarray(hidden.transpose(1, 0, 2))  # [B, T, h]
    if squeeze:
        out_data = out_data[0]
    tracked = w_ih.requires_grad or w_hh.requires_grad or bias.requires_grad or track_input
    if not tracked:
        return Tensor(out_data)

    parents = [w_ih, w_hh, bias] + ([x_in] if x_in is not None else [])

    def bw(grad: Array, local) -> None:
        d_hidden = grad[None] if squeeze else grad
        d_hidden = d_hidden.transpose(1, 0, 2)  # [T, B, h]
        d_gates = np.empty((t_len, batch, 4 * h))
        dh_next = np.zeros((batch, h))
        dc_next = np.zeros((batch, h))
        for t in range(t_len - 1, -1, -1):
            dh = d_hidden[t] + dh_next
            dc = dh * gate_o[t] * (1.0 - tanh_c[t] ** 2) + dc_next
            c_before = cell[t - 1] if t > 0 else np.zeros((batch, h))
            d_gates[t, :, :h] = dc * gate_g[t] * gate_i[t] * (1.0 - gate_i[t])
            d_gates[t, :, h:2 * h] = dc * c_before * gate_f[t] * (1.0 - gate_f[t])
            d_gates[t, :, 2 * h:3 * h] = dc * gate_i[t] * (1.0 - gate_g[t] ** 2)
            d_gates[t, :, 3 * h:] = dh * tanh_c[t] * gate_o[t] * (1.0 - gate_o[t])
            dh_next = d_gates[t] @ w_hh.data
            dc_next = dc * gate_f[t]
        d_gates_flat = d_gates.transpose(1, 0, 2).reshape(batch * t_len, 4 * h)
        if w_ih.requires_grad:
            _accumulate(local, w_ih, d_gates_flat.T @ flat, True)
        if w_hh.requires_grad:
            h_before = np.zeros((t_len, batch, h))
            h_before[1:] = hidden[:-1]
            h_before_flat = h_before.transpose(1, 0, 2).reshape(batch * t_len, h)
            _accumulate(local, w_hh, d_gates_flat.T @ h_before_flat, True)
        if bias.requires_grad:
            _accumulate(local, bias, d_gates_flat.sum(axis=0), True)
        if track_input:
            dx = (d_gates_flat @ w_ih.data).reshape(batch, t_len, d)
            _accumulate(local, x_in, dx[0] if squeeze else dx, True)

    return Tensor._from_op(out_data, parents, bw)


def _sig(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def encode_sequence(features, params: SequenceEncoderParams,
                    expected_len: int = SEQUENCE_LENGTH) -> Tensor:
    """LSTM + per-timestep projection: [T, d] -> [T, D] (optionally batched).

    The time extent must equal the fixed sample length (100); shorter or
    longer inputs are a data-preparation bug, not something to silently pad.
    """
    arr = features.data if isinstance(features, Tensor) else np.asarray(features)
    t_axis = arr.shape[-2] if arr.ndim >= 2 else -1
    if t_axis != expected_len:
        raise ValidationError(
            f"sequence length {t_axis} does not match required length {expected_len}"
        )
    hidden = lstm_forward(features, params)
    lead = hidden.shape[:-1]
    flat = reshape(hidden, (-1, params.hidden_dim))
    projected = add_bias(matmul(flat, params.w_proj), params.b_proj)
    return reshape(projected, lead + (params.output_dim,))


def encode_text(features, params: TextEncoderParams) -> Tensor:
    """Three-layer MLP: [768] -> [D] (or batched [B, 768] -> [B, D])."""
    arr = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    squeeze = arr.ndim == 1
    if arr.ndim not in (1, 2):
        raise DimensionError(f"encode_text expects [d] or [B, d], got {arr.shape}")
    if arr.shape[-1] != params.input_dim:
        raise DimensionError(
            f"text width {arr.shape[-1]} does not match encoder width {params.input_dim}"
        )
    x = features if isinstance(features, Tensor) else Tensor(arr)
    if squeeze:
        x = reshape(x, (1, params.input_dim))
    y = relu(add_bias(matmul(x, params.w1), params.b1))
    y = relu(add_bias(matmul(y, params.w2), params.b2))
    y = add_bias(matmul(y, params.w3), params.b3)
    if squeeze:
        y = reshape(y, (params.output_dim,))
    return y
