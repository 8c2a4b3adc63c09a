"""Confusion-matrix metrics with an explicit positive-class convention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool  # some zero-denominator rate was reported as 0


def compute_metrics(predictions, truths, positive_class: int = 1) -> Metrics:
    """Accuracy/precision/recall/F1 of binary predictions.

    Zero-denominator precision, recall, or F1 are reported as 0 with the
    ``degenerate`` flag set.
    """
    preds = np.asarray(predictions, dtype=np.int64).reshape(-1)
    truth = np.asarray(truths, dtype=np.int64).reshape(-1)
    if preds.shape != truth.shape:
        raise ValidationError(
            f"prediction count {preds.shape[0]} != truth count {truth.shape[0]}"
        )
    if preds.size == 0:
        raise ValidationError("metrics need at least one prediction")
    for arr, what in ((preds, "predictions"), (truth, "truths")):
        if arr.min() < 0 or arr.max() > 1:
            raise ValidationError(f"{what} must be 0 or 1")
    if positive_class not in (0, 1):
        raise ValidationError(f"positive_class must be 0 or 1, got {positive_class}")

    pos_pred = preds == positive_class
    pos_true = truth == positive_class
    tp = int(np.sum(pos_pred & pos_true))
    fp = int(np.sum(pos_pred & ~pos_true))
    fn = int(np.sum(~pos_pred & pos_true))
    tn = int(np.sum(~pos_pred & ~pos_true))

    accuracy = (tp + tn) / preds.size
    degenerate = False
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return Metrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1,
                   tp=tp, fp=fp, fn=fn, tn=tn, degenerate=degenerate)


def mean_metrics(rows: list[Metrics]) -> dict[str, float]:
    """Mean and standard deviation of the four headline rates across folds."""
    if not rows:
        raise ValidationError("no metrics to aggregate")
    out = {}
    for name in ("accuracy", "precision", "recall", "f1"):
        values = np.array([getattr(m, name) for m in rows])
        out[name] = float(values.mean())
        out[f"{name}_std"] = float(values.std())
    return out
