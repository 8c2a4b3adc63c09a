"""Frame-index sampling, synthetic dataset generation, bundles, and splits.

The synthetic generator has two modes.  ``separable`` plants a class-mean
offset along a fixed random direction in every modality, so any reasonable
classifier can reach perfect accuracy; it validates the training loop.
``synchrony-only`` gives *both* classes one burst per sequence modality at a
random timestep with identical marginal statistics; the label says only
whether the video and audio bursts coincide.  Pooling each modality over
time before fusion therefore destroys all label information, which isolates
the value of temporal cross-modal interaction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .container import BUNDLE_MAGIC, read_container, write_container
from .errors import ConfigError, FormatError, ValidationError
from .seeding import substream

SLOT_COUNT = 100
PAD_VIDEO_VALUE = 0.5  # stand-in embedding for the white padding frame
VIDEO_DIM = 768
AUDIO_DIM = 40
TEXT_DIM = 768


# -- frame-index sampling -------------------------------------------------------


@dataclass(frozen=True)
class FrameSamplingPlan:
    """One source index (or None for a padding slot) per output slot."""

    slots: tuple

    @property
    def indices(self) -> list[int]:
        return [s for s in self.slots if s is not None]

    @property
    def pad_count(self) -> int:
        return sum(1 for s in self.slots if s is None)


def sample_frame_indices(n_frames: int, n_slots: int = SLOT_COUNT) -> FrameSamplingPlan:
    """Evenly select ``n_slots`` frames from ``n_frames`` (pad when short).

    Exactly n_frames: identity.  Fewer: all frames then padding slots.
    More: slot i takes frame floor(i * n_frames / n_slots), which is
    strictly increasing and in range.
    """
    if n_frames < 1:
        raise ValidationError(f"n_frames must be >= 1, got {n_frames}")
    if n_frames <= n_slots:
        slots = tuple(range(n_frames)) + (None,) * (n_slots - n_frames)
    else:
        slots = tuple(i * n_frames // n_slots for i in range(n_slots))
    return FrameSamplingPlan(slots=slots)


def assemble_video_features(frame_features: np.ndarray,
                            plan: FrameSamplingPlan | None = None) -> np.ndarray:
    """Apply a sampling plan to per-frame features; padding rows are constant."""
    frame_features = np.asarray(frame_features)
    if plan is None:
        plan = sample_frame_indices(frame_features.shape[0])
    out = np.full((len(plan.slots), frame_features.shape[1]), PAD_VIDEO_VALUE,
                  dtype=frame_features.dtype)
    for i, s in enumerate(plan.slots):
        if s is not None:
            out[i] = frame_features[s]
    return out


# -- sample / manifest types ------------------------------------------------------


@dataclass
class ModalitySample:
    """One example: video [100, 768], audio [100, 40], text [768], binary label."""

    id: str
    video: np.ndarray | None
    audio: np.ndarray | None
    text: np.ndarray | None
    label: int

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label}")
        expected = {"video": (SLOT_COUNT, VIDEO_DIM), "audio": (SLOT_COUNT, AUDIO_DIM),
                    "text": (TEXT_DIM,)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape:
                raise ValidationError(
                    f"sample {self.id}: {name} shape {arr.shape} != {shape}"
                )


@dataclass
class ManifestRecord:
    id: str
    path: str
    label: int
    split: str | None = None  # "train" | "test"
    fold: int | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest ids must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, split: str | None = None, fold: int | None = None,
               exclude_fold: int | None = None) -> list[ManifestRecord]:
        out = self.records
        if split is not None:
            out = [r for r in out if r.split == split]
        if fold is not None:
            out = [r for r in out if r.fold == fold]
        if exclude_fold is not None:
            out = [r for r in out if r.fold != exclude_fold]
        return out

    def write(self, path) -> None:
        lines = []
        for r in self.records:
            lines.append(json.dumps(
                {"id": r.id, "path": r.path, "label": r.label,
                 "split": r.split, "fold": r.fold}, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        records = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(ManifestRecord(
                    id=obj["id"], path=obj["path"], label=int(obj["label"]),
                    split=obj.get("split"), fold=obj.get("fold")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
        return cls(records=records)


# -- synthetic generation ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic multimodal dataset."""

    n_samples: int
    class_balance: float = 0.5
    signal_mode: str = "separable"  # "separable" | "synchrony-only"
    burst_amplitude: float = 6.0
    noise_scale: float = 1.0
    seed: int = 0
    burst_width: int = 7
    min_offset: int = 10  # min circular distance between desynchronized bursts

    def validate(self) -> None:
        if self.n_samples < 2:
            raise ConfigError(f"n_samples must be >= 2, got {self.n_samples}")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError(f"class_balance must be in (0, 1), got {self.class_balance}")
        if self.signal_mode not in ("separable", "synchrony-only"):
            raise ConfigError(f"unknown signal_mode '{self.signal_mode}'")
        if self.burst_amplitude <= 0 or self.noise_scale < 0:
            raise ConfigError("burst_amplitude must be positive and noise_scale >= 0")
        if not 1 <= self.burst_width <= SLOT_COUNT // 4:
            raise ConfigError(f"burst_width out of range: {self.burst_width}")
        if not self.burst_width <= self.min_offset <= SLOT_COUNT // 2:
            raise ConfigError(f"min_offset out of range: {self.min_offset}")


def _unit_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _burst_rows(center: int, width: int) -> np.ndarray:
    half = width // 2
    return (np.arange(center - half, center - half + width)) % SLOT_COUNT


def generate_synthetic_dataset(spec: SynthSpec) -> tuple[list[ModalitySample], DatasetManifest]:
    """Deterministically generate samples plus an unsplit manifest.

    Every sample is derived from its own seed substream, so generation is
    order-independent and reproducible byte-for-byte.
    """
    spec.validate()
    dir_rng = substream(spec.seed, "datagen", "directions")
    u_video = _unit_direction(dir_rng, VIDEO_DIM)
    u_audio = _unit_direction(dir_rng, AUDIO_DIM)
    u_text = _unit_direction(dir_rng, TEXT_DIM)

    n0 = int(round(spec.class_balance * spec.n_samples))
    n0 = min(max(n0, 1), spec.n_samples - 1)
    base_labels = np.array([0] * n0 + [1] * (spec.n_samples - n0), dtype=np.int64)
    perm = substream(spec.seed, "datagen", "labels").permutation(spec.n_samples)
    labels = base_labels[perm]

    samples = []
    records = []
    for i in range(spec.n_samples):
        rng = substream(spec.seed, "datagen", f"sample{i}")
        label = int(labels[i])
        video = rng.standard_normal((SLOT_COUNT, VIDEO_DIM)) * spec.noise_scale
        audio = rng.standard_normal((SLOT_COUNT, AUDIO_DIM)) * spec.noise_scale
        text = rng.standard_normal(TEXT_DIM) * spec.noise_scale
        if spec.signal_mode == "separable":
            sign = 1.0 if label == 0 else -1.0
            shift = sign * spec.burst_amplitude / 2.0
            video += shift * u_video
            audio += shift * u_audio
            text += shift * u_text
        else:
            t_video = int(rng.integers(SLOT_COUNT))
            if label == 0:
                t_audio = t_video
            else:
                offset = int(rng.integers(spec.min_offset, SLOT_COUNT - spec.min_offset + 1))
                t_audio = (t_video + offset) % SLOT_COUNT
            video[_burst_rows(t_video, spec.burst_width)] += spec.burst_amplitude * u_video
            audio[_burst_rows(t_audio, spec.burst_width)] += spec.burst_amplitude * u_audio
        sid = f"sample_{i:05d}"
        sample = ModalitySample(
            id=sid,
            video=video.astype(np.float32),
            audio=audio.astype(np.float32),
            text=text.astype(np.float32),
            label=label,
        )
        sample.validate()
        samples.append(sample)
        records.append(ManifestRecord(id=sid, path=f"{sid}.cmfb", label=label))
    return samples, DatasetManifest(records=records)


# -- bundle I/O -----------------------------------------------------------------


def write_bundle(sample: ModalitySample, path) -> None:
    """Write one sample's tensors (and label) to a bundle file."""
    sample.validate()
    entries: dict[str, np.ndarray] = {}
    for name in ("video", "audio", "text"):
        arr = getattr(sample, name)
        if arr is not None:
            entries[name] = np.asarray(arr, dtype=np.float32)
    entries["label"] = np.array([sample.label], dtype=np.float32)
    write_container(path, entries, magic=BUNDLE_MAGIC)


def read_bundle(path, sample_id: str | None = None) -> ModalitySample:
    """Read a bundle; the id defaults to the file stem."""
    entries = read_container(path, magic=BUNDLE_MAGIC)
    if "label" not in entries:
        raise FormatError(f"{path}: bundle has no 'label' entry")
    sample = ModalitySample(
        id=sample_id if sample_id is not None else Path(path).stem,
        video=entries.get("video"),
        audio=entries.get("audio"),
        text=entries.get("text"),
        label=int(entries["label"].reshape(-1)[0]),
    )
    sample.validate()
    return sample


def save_dataset(samples: list[ModalitySample], manifest: DatasetManifest,
                 out_dir, manifest_name: str = "manifest.ndjson") -> Path:
    """Write every bundle plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {s.id: s for s in samples}
    for record in manifest.records:
        write_bundle(by_id[record.id], out / record.path)
    manifest_path = out / manifest_name
    manifest.write(manifest_path)
    return manifest_path


def load_samples(manifest: DatasetManifest, base_dir) -> dict[str, ModalitySample]:
    base = Path(base_dir)
    out = {}
    for record in manifest.records:
        sample = read_bundle(base / record.path, sample_id=record.id)
        if sample.label != record.label:
            raise FormatError(
                f"{record.path}: bundle label {sample.label} != manifest label {record.label}"
            )
        out[record.id] = sample
    return out


# -- splitting ------------------------------------------------------------------


def split_dataset(manifest: DatasetManifest, train_ratio: float = 0.7, k: int = 5,
                  seed: int = 0) -> DatasetManifest:
    """Assign a seeded 70/30 train/test split plus k folds over the train part.

    Folds differ in size by at most one.  With k = 1 the whole training
    portion lands in fold 0 (trainers then validate on the training data).
    """
    if not 0.0 < train_ratio < 1.0:
        raise ValidationError(f"train_ratio must be in (0, 1), got {train_ratio}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n = len(manifest.records)
    n_train = int(np.floor(train_ratio * n + 1e-9))
    if n_train < k:
        raise ValidationError(f"{n_train} training samples cannot fill {k} folds")
    if n_train == n:
        raise ValidationError("split leaves no test samples")
    order = substream(seed, "split").permutation(n)
    new_records = [replace(r) for r in manifest.records]
    for pos, idx in enumerate(order):
        rec = new_records[idx]
        if pos < n_train:
            rec.split = "train"
            rec.fold = pos % k
        else:
            rec.split = "test"
            rec.fold = None
    return DatasetManifest(records=new_records)


# -- in-memory dataset handle -------------------------------------------------------


@dataclass
class Dataset:
    """Manifest plus loaded samples, the unit the training loop consumes."""

    manifest: DatasetManifest
    samples: dict[str, ModalitySample]

    @classmethod
    def from_memory(cls, samples: list[ModalitySample], manifest: DatasetManifest) -> "Dataset":
        return cls(manifest=manifest, samples={s.id: s for s in samples})

    @classmethod
    def load(cls, manifest_path) -> "Dataset":
        manifest_path = Path(manifest_path)
        manifest = DatasetManifest.read(manifest_path)
        return cls(manifest=manifest,
                   samples=load_samples(manifest, manifest_path.parent))

    def pick(self, records: list[ManifestRecord]) -> list[ModalitySample]:
        return [self.samples[r.id] for r in records]
