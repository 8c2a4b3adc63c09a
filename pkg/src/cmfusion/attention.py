"""Temporal 1-D convolution and crossed residual gating between streams.

Each stream is convolved along time into a single channel; the sigmoid of
one stream's convolution gates the other stream's features, with a residual
pass-through:  out_v = v * sigmoid(conv(a)) + v  (and symmetrically).
Gates therefore live in (0, 1), bounding the output between 1x and 2x the
input for non-negative features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Array, Tensor, _accumulate, add, mul, sigmoid
from .encoders import _uniform_init, FUSION_WIDTH


@dataclass
class TemporalConvParams:
    """Single-output-channel temporal convolution (odd kernel, same padding)."""

    kernel: Tensor  # [c_in, K]
    bias: Tensor    # scalar

    @property
    def c_in(self) -> int:
        return self.kernel.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[1]

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int = FUSION_WIDTH,
               kernel_size: int = 3) -> "TemporalConvParams":
        if kernel_size % 2 != 1:
            raise ValidationError(f"kernel size must be odd, got {kernel_size}")
        return cls(
            kernel=Tensor(_uniform_init(rng, (c_in, kernel_size)), requires_grad=True),
            bias=Tensor(np.zeros(()), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


def temporal_conv(features, params: TemporalConvParams) -> Tensor:
    """Convolve [T, D] (or [B, T, D]) along time into [T, 1] (or [B, T, 1]).

    Zero same-padding of (K-1)/2 on each end keeps the output length T.
    """
    if isinstance(features, Tensor):
        x_in, track_input = features, features.requires_grad
        x = features.data
    else:
        x_in, track_input = None, False
        x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"temporal_conv expects [T, D] or [B, T, D], got {x.shape}")
    batch, t_len, d = x.shape
    if d != params.c_in:
        raise DimensionError(f"channel count {d} does not match kernel channels {params.c_in}")
    kernel, bias = params.kernel, params.bias
    k = params.kernel_size
    pad = (k - 1) // 2

    padded = np.zeros((batch, t_len + 2 * pad, d))
    padded[:, pad:pad + t_len, :] = x
    out = np.full((batch, t_len), bias.data.reshape(()))
    for j in range(k):
        out += padded[:, j:j + t_len, :] @ kernel.data[:, j]
    out_data = out[..., None]  # [B, T, 1]
    if squeeze:
        out_data = out_data[0]

    tracked = kernel.requires_grad or bias.requires_grad or track_input
    if not tracked:
        return Tensor(out_data)
    parents = [kernel, bias] + ([x_in] if x_in is not None else [])

    def bw(grad: Array, local) -> None:
        g = (grad[None] if squeeze else grad)[..., 0]  # [B, T]
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for j in range(k):
                dk[:, j] = np.tensordot(padded[:, j:j + t_len, :], g, axes=([0, 1], [0, 1]))
            _accumulate(local, kernel, dk, True)
        if bias.requires_grad:
            _accumulate(local, bias, np.asarray(g.sum()).reshape(bias.shape), True)
        if track_input:
            dpad = np.zeros_like(padded)
            for j in range(k):
                dpad[:, j:j + t_len, :] += g[..., None] * kernel.data[:, j]
            dx = dpad[:, pad:pad + t_len, :]
            _accumulate(local, x_in, dx[0] if squeeze else dx, True)

    return Tensor._from_op(out_data, parents, bw)


def cross_attend(feat_v, feat_a, conv_v: TemporalConvParams, conv_a: TemporalConvParams,
                 gate: str = "sigmoid") -> tuple[Tensor, Tensor]:
    """Gate each stream by the other stream's temporal convolution.

    ``gate`` selects the nonlinearity applied to the convolution output
    before gating: "sigmoid" (default, SE-style bounded attention) or "raw"
    (no nonlinearity, for faithfulness experiments).
    """
    va = feat_v.data if isinstance(feat_v, Tensor) else np.asarray(feat_v)
    aa = feat_a.data if isinstance(feat_a, Tensor) else np.asarray(feat_a)
    if va.shape[-2] != aa.shape[-2]:
        raise ValidationError(
            f"stream lengths differ: video {va.shape[-2]} vs audio {aa.shape[-2]}"
        )
    if gate not in ("sigmoid", "raw"):
        raise ValidationError(f"unknown gate nonlinearity '{gate}'")
    gate_v = temporal_conv(feat_v, conv_v)
    gate_a = temporal_conv(feat_a, conv_a)
    if gate == "sigmoid":
        gate_v = sigmoid(gate_v)
        gate_a = sigmoid(gate_a)
    out_v = add(mul(feat_v, gate_a), feat_v)
    out_a = add(mul(feat_a, gate_v), feat_a)
    return out_v, out_a
