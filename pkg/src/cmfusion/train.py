"""Training loop, evaluation, checkpointing, ablation suites, and exports.

One run trains one model per fold on the k-fold partition of the training
split, then evaluates every fold model on the shared test split; reported
suite metrics are the mean over fold models.  Everything is deterministic
given (seed, config, dataset bytes): initialization, shuffling, and batch
order all flow from named substreams of the run seed.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .container import CHECKPOINT_MAGIC, read_container, write_container
from .data import Dataset, DatasetManifest, ModalitySample
from .errors import ConfigError, FormatError, ValidationError
from .metrics import Metrics, compute_metrics, mean_metrics
from .model import (MODALITIES, ArchitectureVariant, CmfusionModel, ModelDims,
                    TABLE_II_VARIANTS, TABLE_III_VARIANTS, batch_from_samples,
                    get_variant)
from .optim import AdamState
from .seeding import substream
from .tensor import backward, check_finite_loss, cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol; defaults mirror the reference configuration."""

    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 40
    k: int = 5
    seed: int = 0
    variant: ArchitectureVariant = get_variant("cmfusion")
    positive_class: int = 1
    dims: ModelDims = ModelDims()

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.k < 1:
            raise ConfigError("learning_rate, batch_size, k must be positive; epochs >= 0")
        if self.positive_class not in (0, 1):
            raise ConfigError(f"positive_class must be 0 or 1, got {self.positive_class}")


@dataclass
class HistoryRecord:
    fold: int
    epoch: int
    train_loss: float
    val_accuracy: float
    val_f1: float


@dataclass
class FoldResult:
    fold: int
    model: CmfusionModel
    history: list[HistoryRecord]
    test_metrics: Metrics


@dataclass
class TrainResult:
    config: TrainConfig
    folds: list[FoldResult]

    @property
    def history(self) -> list[HistoryRecord]:
        return [h for f in self.folds for h in f.history]

    def mean_test_metrics(self) -> dict[str, float]:
        return mean_metrics([f.test_metrics for f in self.folds])


def _check_modalities(variant: ArchitectureVariant, samples: list[ModalitySample]) -> None:
    for s in samples[:1]:
        for m in variant.modalities:
            if getattr(s, m) is None:
                raise ConfigError(
                    f"variant '{variant.name}' needs modality '{m}' "
                    f"but sample '{s.id}' lacks it"
                )


def predict_labels(model: CmfusionModel, samples: list[ModalitySample],
                   batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample; a 0.5/0.5 tie resolves to class 0."""
    out = np.empty(len(samples), dtype=np.int64)
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        batch, _ = batch_from_samples(chunk)
        probs = model.forward(batch)
        out[lo:lo + len(chunk)] = np.argmax(probs.data, axis=1)
    return out


def evaluate(model: CmfusionModel, samples: list[ModalitySample],
             positive_class: int = 1) -> Metrics:
    """Metrics of the model's argmax predictions on the given samples."""
    if not samples:
        raise ValidationError("cannot evaluate on an empty sample list")
    _check_modalities(model.variant, samples)
    preds = predict_labels(model, samples)
    truths = np.array([s.label for s in samples], dtype=np.int64)
    return compute_metrics(preds, truths, positive_class)


def _train_one_fold(config: TrainConfig, dataset: Dataset, fold: int) -> FoldResult:
    manifest = dataset.manifest
    if config.k == 1:
        train_recs = manifest.subset(split="train")
        val_recs = train_recs
    else:
        train_recs = manifest.subset(split="train", exclude_fold=fold)
        val_recs = manifest.subset(split="train", fold=fold)
    test_recs = manifest.subset(split="test")
    if not train_recs or not val_recs or not test_recs:
        raise ValidationError(f"fold {fold}: empty train, validation, or test subset")

    train_samples = dataset.pick(train_recs)
    val_samples = dataset.pick(val_recs)
    test_samples = dataset.pick(test_recs)
    _check_modalities(config.variant, train_samples)

    model = CmfusionModel(config.variant, config.dims,
                          seed=_fold_seed(config.seed, fold))
    params = list(model.parameters().values())
    adam = AdamState(params, learning_rate=config.learning_rate)
    shuffle_rng = substream(config.seed, "shuffle", fold)

    history: list[HistoryRecord] = []
    n = len(train_samples)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):  # last partial batch is kept
            chunk = [train_samples[i] for i in order[lo:lo + config.batch_size]]
            batch, labels = batch_from_samples(chunk)
            adam.zero_grad()
            loss = check_finite_loss(cross_entropy(model.forward_logits(batch), labels))
            backward(loss)
            adam.step()
            loss_sum += loss.item() * len(chunk)
        val = evaluate(model, val_samples, config.positive_class)
        history.append(HistoryRecord(fold=fold, epoch=epoch, train_loss=loss_sum / n,
                                     val_accuracy=val.accuracy, val_f1=val.f1))
    test = evaluate(model, test_samples, config.positive_class)
    return FoldResult(fold=fold, model=model, history=history, test_metrics=test)


def _fold_seed(seed: int, fold: int) -> int:
    # distinct init stream per fold, stable across machines
    return (int(seed) * 1000003 + fold) & 0x7FFFFFFF


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    """Train one model per fold; see module docstring for the protocol."""
    config.validate()
    folds = sorted({r.fold for r in dataset.manifest.subset(split="train")
                    if r.fold is not None})
    if not folds:
        raise ValidationError("manifest has no fold assignments; run split_dataset first")
    if config.k != len(folds):
        raise ConfigError(f"config.k={config.k} but manifest has {len(folds)} folds")
    results = [_train_one_fold(config, dataset, fold) for fold in folds]
    return TrainResult(config=config, folds=results)


# -- checkpointing ---------------------------------------------------------------

_COMBINE_CODES = {"sum": 0.0, "concat": 1.0}
_GATE_CODES = {"sigmoid": 0.0, "raw": 1.0}
_MODALITY_BITS = {"video": 1, "audio": 2, "text": 4}


def _meta_entries(model: CmfusionModel) -> dict[str, np.ndarray]:
    v, d = model.variant, model.dims
    bits = sum(_MODALITY_BITS[m] for m in v.modalities)
    scalar = lambda x: np.array([x], dtype=np.float32)
    return {
        "meta.modalities": scalar(bits),
        "meta.tca": scalar(float(v.tca)),
        "meta.channel_wise": scalar(float(v.channel_wise)),
        "meta.modality_wise": scalar(float(v.modality_wise)),
        "meta.combine": scalar(_COMBINE_CODES[v.combine]),
        "meta.post_concat_dense": scalar(float(v.post_concat_dense)),
        "meta.scalar_weights": scalar(float(v.scalar_weights)),
        "meta.video_dim": scalar(d.video_dim),
        "meta.audio_dim": scalar(d.audio_dim),
        "meta.text_dim": scalar(d.text_dim),
        "meta.hidden_dim": scalar(d.hidden_dim),
        "meta.fusion_width": scalar(d.fusion_width),
        "meta.n_heads": scalar(d.n_heads),
        "meta.attention_dim": scalar(d.attention_dim),
        "meta.conv_kernel": scalar(d.conv_kernel),
        "meta.text_h1": scalar(d.text_hidden[0]),
        "meta.text_h2": scalar(d.text_hidden[1]),
        "meta.timesteps": scalar(d.timesteps),
        "meta.gate": scalar(_GATE_CODES[d.gate]),
    }


def _variant_from_meta(meta: dict[str, float]) -> tuple[ArchitectureVariant, ModelDims]:
    bits = int(meta["meta.modalities"])
    mods = tuple(m for m in MODALITIES if bits & _MODALITY_BITS[m])
    combine = "sum" if meta["meta.combine"] == 0.0 else "concat"
    fields = dict(modalities=mods, tca=bool(meta["meta.tca"]),
                  channel_wise=bool(meta["meta.channel_wise"]),
                  modality_wise=bool(meta["meta.modality_wise"]),
                  combine=combine,
                  post_concat_dense=bool(meta["meta.post_concat_dense"]),
                  scalar_weights=bool(meta["meta.scalar_weights"]))
    name = "custom"
    for v in TABLE_II_VARIANTS + TABLE_III_VARIANTS:
        if all(getattr(v, key) == val for key, val in fields.items()):
            name = v.name
            break
    variant = ArchitectureVariant(name=name, **fields)
    dims = ModelDims(
        video_dim=int(meta["meta.video_dim"]),
        audio_dim=int(meta["meta.audio_dim"]),
        text_dim=int(meta["meta.text_dim"]),
        hidden_dim=int(meta["meta.hidden_dim"]),
        fusion_width=int(meta["meta.fusion_width"]),
        n_heads=int(meta["meta.n_heads"]),
        attention_dim=int(meta["meta.attention_dim"]),
        conv_kernel=int(meta["meta.conv_kernel"]),
        text_hidden=(int(meta["meta.text_h1"]), int(meta["meta.text_h2"])),
        timesteps=int(meta["meta.timesteps"]),
        gate="sigmoid" if meta["meta.gate"] == 0.0 else "raw",
    )
    return variant, dims


def save_checkpoint(model: CmfusionModel, path) -> None:
    """Serialize parameters (float32) plus variant metadata; quantizes the
    in-memory model through the same 32-bit storage precision."""
    entries = dict(_meta_entries(model))
    model.quantize_params()
    for name, p in model.parameters().items():
        entries[f"param.{name}"] = p.data.astype(np.float32)
    write_container(path, entries, magic=CHECKPOINT_MAGIC)


def load_checkpoint(path, expected_variant: ArchitectureVariant | None = None) -> CmfusionModel:
    """Rebuild a model from a checkpoint; validates variant compatibility."""
    entries = read_container(path, magic=CHECKPOINT_MAGIC)
    meta = {k: float(v.reshape(-1)[0]) for k, v in entries.items() if k.startswith("meta.")}
    try:
        variant, dims = _variant_from_meta(meta)
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint missing metadata entry {exc}") from exc
    if expected_variant is not None and _structural(variant) != _structural(expected_variant):
        raise ConfigError(
            f"checkpoint holds variant '{variant.name}' but '{expected_variant.name}' "
            "was requested"
        )
    model = CmfusionModel(variant, dims, seed=0)
    params = model.parameters()
    stored = {k[len("param."):]: v for k, v in entries.items() if k.startswith("param.")}
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise FormatError(
            f"{path}: parameter names do not match (missing {missing}, extra {extra})"
        )
    for name, p in params.items():
        if stored[name].shape != p.data.shape:
            raise FormatError(
                f"{path}: parameter '{name}' has shape {stored[name].shape}, "
                f"expected {p.data.shape}"
            )
        p.data = stored[name].astype(np.float64)
    return model


def _structural(v: ArchitectureVariant) -> tuple:
    return (v.modalities, v.tca, v.channel_wise, v.modality_wise, v.combine,
            v.post_concat_dense, v.scalar_weights)


# -- history / ablation output -----------------------------------------------------


def write_history(records: list[HistoryRecord], path) -> None:
    lines = [json.dumps({"fold": r.fold, "epoch": r.epoch,
                         "train_loss": round(r.train_loss, 10),
                         "val_accuracy": round(r.val_accuracy, 10),
                         "val_f1": round(r.val_f1, 10)}, sort_keys=True)
             for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass
class AblationRow:
    variant: str
    metrics: dict[str, float] | None
    error: str | None = None


ABLATION_SUITES = {
    "tableII": tuple(v.name for v in TABLE_II_VARIANTS),
    "tableIII": tuple(v.name for v in TABLE_III_VARIANTS),
}


def run_ablation(suite: str, dataset: Dataset, base_config: TrainConfig,
                 parallel: int = 1) -> list[AblationRow]:
    """Train and evaluate every variant of a suite on the same seed and split.

    A configuration error in one row skips that row, not the suite.  Rows
    may run concurrently; results are ordered by suite position regardless
    of completion order.
    """
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown suite '{suite}'; known: {sorted(ABLATION_SUITES)}")
    names = ABLATION_SUITES[suite]

    def run_row(name: str) -> AblationRow:
        config = replace(base_config, variant=get_variant(name))
        try:
            result = train(config, dataset)
        except ConfigError as exc:
            return AblationRow(variant=name, metrics=None, error=str(exc))
        return AblationRow(variant=name, metrics=result.mean_test_metrics())

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(run_row, names))
    else:
        rows = [run_row(name) for name in names]
    return rows


def write_ablation_table(rows: list[AblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "accuracy", "f1", "precision", "recall"])
        for row in rows:
            if row.metrics is None:
                writer.writerow([row.variant, "nan", "nan", "nan", "nan"])
            else:
                writer.writerow([row.variant,
                                 f"{row.metrics['accuracy']:.6f}",
                                 f"{row.metrics['f1']:.6f}",
                                 f"{row.metrics['precision']:.6f}",
                                 f"{row.metrics['recall']:.6f}"])


# -- embedding export ---------------------------------------------------------------

EXPORT_STAGES = ("pre_fusion", "fused")


def export_embeddings(model: CmfusionModel, samples: list[ModalitySample], stage: str,
                      path, batch_size: int = 256) -> None:
    """Write per-sample embeddings as CSV for external projection tools.

    ``pre_fusion`` emits one row per (sample, modality) with the pooled
    per-modality vector entering modality fusion; ``fused`` emits one row
    per sample with the combined vector entering the classifier.
    """
    if stage not in EXPORT_STAGES:
        raise ValidationError(f"unknown stage '{stage}'; known: {EXPORT_STAGES}")
    if not samples:
        raise ValidationError("cannot export an empty sample list")
    _check_modalities(model.variant, samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = model.dims.fusion_width if stage == "pre_fusion" else model.fused_width()
        if stage == "pre_fusion":
            header = ["id", "modality", "label"]
        else:
            header = ["id", "label"]
        writer.writerow(header + [f"c{i}" for i in range(width)])
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            batch, _ = batch_from_samples(chunk)
            if stage == "pre_fusion":
                pooled = model._modality_vectors(batch)
                for m in model.variant.modalities:
                    vectors = pooled[m].data
                    for s, vec in zip(chunk, vectors):
                        writer.writerow([s.id, m[0], s.label]
                                        + [f"{x:.8g}" for x in vec])
            else:
                fused = model.fused_vectors(batch)
                for s, vec in zip(chunk, fused.data):
                    writer.writerow([s.id, s.label] + [f"{x:.8g}" for x in vec])
