"""Model assembly: architecture variants, parameter sets, and the forward pass.

A variant selects the modality subset, whether temporal cross-attention runs
between video and audio, whether channel-wise and modality-wise fusion are
applied, and how per-modality vectors combine (elementwise sum or concat).
Two extra switches cover the fusion-method case studies: a dense layer after
plain concatenation (m2) and trainable per-modality scalar weights before
concatenation (m3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TemporalConvParams, cross_attend
from .encoders import (FUSION_WIDTH, SEQUENCE_LENGTH, SequenceEncoderParams,
                       TextEncoderParams, _uniform_init, encode_sequence, encode_text)
from .errors import ConfigError, ValidationError
from .fusion import (ChannelWiseParams, ClassifierParams, ModalityWiseParams,
                     channel_fuse, classifier_logits, concat_last, modality_fuse,
                     temporal_pool)
from .seeding import substream
from .tensor import Tensor, add_bias, matmul, mul_scalar, relu, reshape, softmax_rows

MODALITIES = ("video", "audio", "text")


@dataclass(frozen=True)
class ArchitectureVariant:
    """Flags spanning the ablation rows and fusion-method case studies."""

    name: str
    modalities: tuple[str, ...] = MODALITIES
    tca: bool = False
    channel_wise: bool = False
    modality_wise: bool = False
    combine: str = "concat"  # "sum" | "concat"
    post_concat_dense: bool = False  # m2: dense layer after plain concat
    scalar_weights: bool = False     # m3: trainable per-modality scalars

    def __post_init__(self):
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown:
            raise ConfigError(f"unknown modalities {unknown}")
        if len(set(self.modalities)) != len(self.modalities) or not self.modalities:
            raise ConfigError("modalities must be a non-empty set")
        if self.combine not in ("sum", "concat"):
            raise ConfigError(f"unknown combine mode '{self.combine}'")
        if self.tca and not {"video", "audio"} <= set(self.modalities):
            raise ConfigError("temporal cross-attention requires both video and audio")
        if self.post_concat_dense and self.combine != "concat":
            raise ConfigError("post-concat dense layer requires concat combination")
        if self.scalar_weights and self.modality_wise:
            raise ConfigError("scalar modality weights and modality-wise fusion are exclusive")


# Ablation-table rows.  Concatenation rows feed pooled encodings straight to
# the classifier; "cmf" rows add channel- and modality-wise fusion.
TABLE_II_VARIANTS = (
    ArchitectureVariant("concat_va", ("video", "audio")),
    ArchitectureVariant("concat_vt", ("video", "text")),
    ArchitectureVariant("concat_ta", ("text", "audio")),
    ArchitectureVariant("concat_vat", MODALITIES),
    ArchitectureVariant("tca_concat_vat", MODALITIES, tca=True),
    ArchitectureVariant("cmf_sum_vat", MODALITIES, channel_wise=True,
                        modality_wise=True, combine="sum"),
    ArchitectureVariant("cmfusion", MODALITIES, tca=True, channel_wise=True,
                        modality_wise=True, combine="sum"),
)

# Fusion-method case studies.
TABLE_III_VARIANTS = (
    ArchitectureVariant("m1", MODALITIES, tca=True, combine="sum"),
    ArchitectureVariant("m2", MODALITIES, post_concat_dense=True),
    ArchitectureVariant("m3", MODALITIES, scalar_weights=True),
    ArchitectureVariant("m4", MODALITIES, tca=True, channel_wise=True,
                        modality_wise=True, combine="concat"),
)

VARIANTS = {v.name: v for v in TABLE_II_VARIANTS + TABLE_III_VARIANTS}


def get_variant(name: str) -> ArchitectureVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(
            f"unknown variant '{name}'; known: {', '.join(sorted(VARIANTS))}"
        ) from None


@dataclass(frozen=True)
class ModelDims:
    """Architecture widths; defaults mirror the reference configuration."""

    video_dim: int = 768
    audio_dim: int = 40
    text_dim: int = 768
    hidden_dim: int = 128
    fusion_width: int = FUSION_WIDTH
    n_heads: int = 8
    attention_dim: int = 32
    conv_kernel: int = 3
    text_hidden: tuple[int, int] = (256, 128)
    timesteps: int = SEQUENCE_LENGTH
    gate: str = "sigmoid"  # TCA gate nonlinearity: "sigmoid" | "raw"

    def __post_init__(self):
        if self.fusion_width % self.n_heads != 0:
            raise ConfigError(
                f"n_heads {self.n_heads} must divide fusion width {self.fusion_width}"
            )
        if self.gate not in ("sigmoid", "raw"):
            raise ConfigError(f"unknown gate nonlinearity '{self.gate}'")


class CmfusionModel:
    """Named parameter collection for one architecture variant."""

    def __init__(self, variant: ArchitectureVariant, dims: ModelDims = ModelDims(),
                 seed: int = 0):
        self.variant = variant
        self.dims = dims
        self.seed = int(seed)
        rng = substream(seed, "init")
        d = dims.fusion_width
        mods = variant.modalities

        self.video_encoder = None
        self.audio_encoder = None
        self.text_encoder = None
        if "video" in mods:
            self.video_encoder = SequenceEncoderParams.create(
                rng, dims.video_dim, dims.hidden_dim, d)
        if "audio" in mods:
            self.audio_encoder = SequenceEncoderParams.create(
                rng, dims.audio_dim, dims.hidden_dim, d)
        if "text" in mods:
            self.text_encoder = TextEncoderParams.create(
                rng, dims.text_dim, dims.text_hidden, d)

        self.conv_video = self.conv_audio = None
        if variant.tca:
            self.conv_video = TemporalConvParams.create(rng, d, dims.conv_kernel)
            self.conv_audio = TemporalConvParams.create(rng, d, dims.conv_kernel)

        self.channel = {}
        if variant.channel_wise:
            self.channel = {m: ChannelWiseParams.create(rng, d, dims.n_heads)
                            for m in mods}

        self.modality = None
        if variant.modality_wise:
            self.modality = ModalityWiseParams.create(rng, d, dims.attention_dim)

        self.scalars = {}
        if variant.scalar_weights:
            self.scalars = {m: Tensor(np.ones(1), requires_grad=True) for m in mods}

        self.dense_w = self.dense_b = None
        if variant.post_concat_dense:
            concat_width = d * len(mods)
            self.dense_w = Tensor(_uniform_init(rng, (concat_width, d)), requires_grad=True)
            self.dense_b = Tensor(np.zeros(d), requires_grad=True)

        self.classifier = ClassifierParams.create(rng, self.fused_width())

    def fused_width(self) -> int:
        d = self.dims.fusion_width
        if self.variant.post_concat_dense:
            return d
        if self.variant.combine == "sum":
            return d
        return d * len(self.variant.modalities)

    def parameters(self) -> dict[str, Tensor]:
        """Stable name -> tensor map (construction order, stable across runs)."""
        out: dict[str, Tensor] = {}
        if self.video_encoder:
            out.update(self.video_encoder.named("video_encoder"))
        if self.audio_encoder:
            out.update(self.audio_encoder.named("audio_encoder"))
        if self.text_encoder:
            out.update(self.text_encoder.named("text_encoder"))
        if self.conv_video:
            out.update(self.conv_video.named("conv_video"))
            out.update(self.conv_audio.named("conv_audio"))
        for m, params in self.channel.items():
            out.update(params.named(f"channel_{m}"))
        if self.modality:
            out.update(self.modality.named("modality"))
        for m, s in self.scalars.items():
            out[f"scalar_{m}"] = s
        if self.dense_w is not None:
            out["dense.w"] = self.dense_w
            out["dense.b"] = self.dense_b
        out.update(self.classifier.named("classifier"))
        return out

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def quantize_params(self) -> None:
        """Round every parameter through 32-bit storage precision in place."""
        for p in self.parameters().values():
            p.data = p.data.astype(np.float32).astype(np.float64)

    # -- forward -------------------------------------------------------------

    def _modality_vectors(self, batch: dict[str, np.ndarray]) -> dict[str, Tensor]:
        """Encode, cross-attend, pool, and channel-fuse each selected modality."""
        mods = self.variant.modalities
        for m in mods:
            if batch.get(m) is None:
                raise ConfigError(f"variant '{self.variant.name}' requires modality '{m}'")
        encoded: dict[str, Tensor] = {}
        if "video" in mods:
            encoded["video"] = encode_sequence(batch["video"], self.video_encoder,
                                               self.dims.timesteps)
        if "audio" in mods:
            encoded["audio"] = encode_sequence(batch["audio"], self.audio_encoder,
                                               self.dims.timesteps)
        if self.variant.tca:
            encoded["video"], encoded["audio"] = cross_attend(
                encoded["video"], encoded["audio"],
                self.conv_video, self.conv_audio, gate=self.dims.gate)
        pooled: dict[str, Tensor] = {}
        for m in mods:
            if m == "text":
                pooled[m] = encode_text(batch["text"], self.text_encoder)
            else:
                pooled[m] = temporal_pool(encoded[m])
        if self.variant.channel_wise:
            pooled = {m: channel_fuse(v, self.channel[m]) for m, v in pooled.items()}
        return pooled

    def fused_vectors(self, batch: dict[str, np.ndarray]) -> Tensor:
        """The combined representation entering the classifier ([B, fused_width])."""
        pooled = self._modality_vectors(batch)
        mods = self.variant.modalities
        if self.variant.modality_wise:
            fused = modality_fuse(pooled, self.modality, self.variant.combine)
        else:
            vecs = [pooled[m] for m in mods]
            if self.variant.scalar_weights:
                vecs = [mul_scalar(v, self.scalars[m]) for m, v in zip(mods, vecs)]
            if self.variant.combine == "sum":
                fused = vecs[0]
                for v in vecs[1:]:
                    fused = fused + v
            else:
                fused = concat_last(vecs)
        if self.variant.post_concat_dense:
            fused = relu(add_bias(matmul(fused, self.dense_w), self.dense_b))
        return fused

    def forward_logits(self, batch: dict[str, np.ndarray]) -> Tensor:
        return classifier_logits(self.fused_vectors(batch), self.classifier)

    def forward(self, batch: dict[str, np.ndarray]) -> Tensor:
        """Class probability rows ([B, 2]); rows sum to one."""
        return softmax_rows(self.forward_logits(batch))


def batch_from_samples(samples) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Stack a list of samples into float64 modality arrays plus labels."""
    if not samples:
        raise ValidationError("empty batch")

    def stack(name):
        arrays = [getattr(s, name) for s in samples]
        if any(a is None for a in arrays):
            return None
        return np.stack([np.asarray(a, dtype=np.float64) for a in arrays])

    batch = {"video": stack("video"), "audio": stack("audio"), "text": stack("text")}
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return batch, labels


def forward(samples, model: CmfusionModel,
            variant: ArchitectureVariant | None = None) -> Tensor:
    """Probabilities for a single sample or a list of samples.

    ``variant``, when given, must match the variant the model was built
    with; it exists so call sites can assert which architecture they run.
    """
    if variant is not None and variant != model.variant:
        raise ConfigError(
            f"model was built for variant '{model.variant.name}', not '{variant.name}'"
        )
    single = not isinstance(samples, (list, tuple))
    batch, _ = batch_from_samples([samples] if single else list(samples))
    probs = model.forward(batch)
    return reshape(probs, (2,)) if single else probs
