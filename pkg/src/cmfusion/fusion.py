"""Channel-wise fusion, modality-wise gated fusion, and the classifier head.

Channel-wise fusion splits a D-vector into n contiguous segments, maps each
through its own small linear head, re-concatenates, projects, and applies a
ReLU enhancement layer.  Modality-wise fusion computes a scalar attention
score per modality (tanh projection dotted with a context vector) and an
elementwise sigmoid gate, weights each modality by both, then combines by
elementwise sum or by concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .encoders import _uniform_init, FUSION_WIDTH
from .tensor import (Tensor, add_bias, concat_last, matmul, mean_over_time, mul,
                     relu, reshape, sigmoid, slice_last, softmax_rows, tanh)


@dataclass
class ChannelWiseParams:
    """Per-head segment maps plus output projection and enhancement layer."""

    heads_w: list[Tensor]   # n entries of [s, s]
    heads_b: list[Tensor]   # n entries of [s]
    w_out: Tensor           # [D, D]
    b_out: Tensor           # [D]
    w_enh: Tensor           # [D, D]
    b_enh: Tensor           # [D]

    @property
    def n_heads(self) -> int:
        return len(self.heads_w)

    @property
    def width(self) -> int:
        return self.w_out.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, width: int = FUSION_WIDTH,
               n_heads: int = 8) -> "ChannelWiseParams":
        if width % n_heads != 0:
            raise ConfigError(f"head count {n_heads} must divide feature width {width}")
        seg = width // n_heads
        return cls(
            heads_w=[Tensor(_uniform_init(rng, (seg, seg)), requires_grad=True)
                     for _ in range(n_heads)],
            heads_b=[Tensor(np.zeros(seg), requires_grad=True) for _ in range(n_heads)],
            w_out=Tensor(_uniform_init(rng, (width, width)), requires_grad=True),
            b_out=Tensor(np.zeros(width), requires_grad=True),
            w_enh=Tensor(_uniform_init(rng, (width, width)), requires_grad=True),
            b_enh=Tensor(np.zeros(width), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.heads_w, self.heads_b)):
            out[f"{prefix}.head{i}.w"] = w
            out[f"{prefix}.head{i}.b"] = b
        out[f"{prefix}.w_out"] = self.w_out
        out[f"{prefix}.b_out"] = self.b_out
        out[f"{prefix}.w_enh"] = self.w_enh
        out[f"{prefix}.b_enh"] = self.b_enh
        return out


@dataclass
class ModalityWiseParams:
    """Shared attention projection, context vector, and gating weights."""

    w_att: Tensor   # [D, d_att]
    context: Tensor  # [d_att]
    w_gate: Tensor  # [D, D]

    @classmethod
    def create(cls, rng: np.random.Generator, width: int = FUSION_WIDTH,
               attention_dim: int = 32) -> "ModalityWiseParams":
        return cls(
            w_att=Tensor(_uniform_init(rng, (width, attention_dim)), requires_grad=True),
            context=Tensor(_uniform_init(rng, (attention_dim,)), requires_grad=True),
            w_gate=Tensor(_uniform_init(rng, (width, width)), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_att": self.w_att, f"{prefix}.context": self.context,
                f"{prefix}.w_gate": self.w_gate}


@dataclass
class ClassifierParams:
    """Final linear layer onto two class logits."""

    w: Tensor  # [D_in, 2]
    b: Tensor  # [2]

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int) -> "ClassifierParams":
        return cls(
            w=Tensor(_uniform_init(rng, (input_dim, 2)), requires_grad=True),
            b=Tensor(np.zeros(2), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def temporal_pool(features) -> Tensor:
    """Mean over the time axis: [T, D] -> [D] (or [B, T, D] -> [B, D])."""
    return mean_over_time(features)


def _as_rows(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.data.ndim == 1:
        return reshape(t, (1, t.shape[0])), True
    if t.data.ndim != 2:
        raise DimensionError(f"expected [D] or [B, D], got {t.shape}")
    return t, False


def channel_fuse(features, params: ChannelWiseParams) -> Tensor:
    """Split into n segments, map each head, concat, project, enhance."""
    x, squeeze = _as_rows(features)
    width = x.shape[-1]
    if width != params.width:
        raise DimensionError(f"input width {width} does not match fusion width {params.width}")
    n = params.n_heads
    seg = width // n
    pieces = []
    for i in range(n):
        segment = slice_last(x, i * seg, (i + 1) * seg)
        pieces.append(add_bias(matmul(segment, params.heads_w[i]), params.heads_b[i]))
    merged = concat_last(pieces)
    projected = add_bias(matmul(merged, params.w_out), params.b_out)
    enhanced = relu(add_bias(matmul(projected, params.w_enh), params.b_enh))
    return reshape(enhanced, (width,)) if squeeze else enhanced


def modality_scores(features, params: ModalityWiseParams) -> tuple[Tensor, Tensor]:
    """Scalar attention score and elementwise gate for one modality."""
    x, squeeze = _as_rows(features)
    att = tanh(matmul(x, params.w_att))
    score = matmul(att, reshape(params.context, (params.context.shape[0], 1)))  # [B, 1]
    gate = sigmoid(matmul(x, params.w_gate))  # [B, D]
    if squeeze:
        return reshape(score, (1,)), reshape(gate, (gate.shape[-1],))
    return score, gate


def modality_fuse(feats: dict[str, Tensor], params: ModalityWiseParams,
                  combine: str = "sum") -> Tensor:
    """Weight each modality by score * gate, then sum or concatenate.

    ``feats`` maps modality name to a [D] or [B, D] tensor; iteration order
    fixes the concat layout (callers pass an ordered dict).
    """
    if combine not in ("sum", "concat"):
        raise ConfigError(f"unknown combine mode '{combine}'")
    weighted = []
    squeeze = False
    for name, f in feats.items():
        x, squeeze = _as_rows(f)
        score, gate = modality_scores(x, params)
        weighted.append(mul(mul(gate, score), x))
    if combine == "sum":
        fused = weighted[0]
        for w in weighted[1:]:
            fused = fused + w
    else:
        fused = concat_last(weighted)
    if squeeze:
        fused = reshape(fused, (fused.shape[-1],))
    return fused


def classifier_logits(fused, params: ClassifierParams) -> Tensor:
    x, squeeze = _as_rows(fused)
    if x.shape[-1] != params.input_dim:
        raise DimensionError(
            f"fused width {x.shape[-1]} does not match classifier width {params.input_dim}"
        )
    logits = add_bias(matmul(x, params.w), params.b)
    return reshape(logits, (2,)) if squeeze else logits


def classify(fused, params: ClassifierParams) -> Tensor:
    """Softmax over two logits; class index 0 is the positive-content analog."""
    x, squeeze = _as_rows(fused)
    logits = classifier_logits(x, params)
    probs = softmax_rows(logits)
    return reshape(probs, (2,)) if squeeze else probs
