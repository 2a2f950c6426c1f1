"""Evaluation: top-k accuracy, macro-F1, confusion matrices and their files."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import LabeledSample, TactileTensor


class MetricsError(ValueError):
    pass


@dataclass
class EvalReport:
    acc1: float
    acc3: float
    macro_f1: float
    confusion: np.ndarray  # (M, M) counts, true rows x predicted columns
    precision: np.ndarray  # (M,)
    recall: np.ndarray  # (M,)
    f1: np.ndarray  # (M,)
    supports: np.ndarray  # (M,) true counts per class
    class_names: list[str] | None = None

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def per_class_accuracy(self, classes: Sequence[int]) -> float:
        """Accuracy restricted to samples whose true class is in `classes`."""
        idx = np.asarray(list(classes), dtype=int)
        support = self.supports[idx].sum()
        if support == 0:
            raise MetricsError("no samples in the requested class subset")
        correct = self.confusion[idx, idx].sum()
        return float(correct / support)

    def to_json(self) -> str:
        names = self.class_names or [f"class_{i}" for i in range(self.n_classes)]
        payload = {
            "acc1": self.acc1,
            "acc3": self.acc3,
            "macro_f1": self.macro_f1,
            "classes": names,
            "supports": self.supports.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "confusion": self.confusion.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def confusion_csv(self) -> str:
        lines = [",".join(str(int(v)) for v in row) for row in self.confusion]
        return "\n".join(lines) + "\n"


def top_k_predictions(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most probable classes, ties broken by ascending class id."""
    order = np.argsort(-probs, axis=-1, kind="stable")
    return order[..., :k]


def evaluate_predictions(
    labels: np.ndarray,
    probs: np.ndarray,
    n_classes: int | None = None,
    class_names: list[str] | None = None,
) -> EvalReport:
    """Score a probability matrix (N, M) against integer labels (N,).

    macro-F1 averages per-class F1 over all M classes; a class absent from
    both labels and predictions contributes 0.
    """
    labels = np.asarray(labels, dtype=int)
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or labels.ndim != 1 or probs.shape[0] != labels.shape[0]:
        raise MetricsError(f"mismatched shapes: labels {labels.shape}, probs {probs.shape}")
    if labels.size == 0:
        raise MetricsError("empty split")
    m = n_classes if n_classes is not None else probs.shape[1]
    if probs.shape[1] != m:
        raise MetricsError(f"probability matrix has {probs.shape[1]} columns, expected {m}")
    if labels.min() < 0 or labels.max() >= m:
        raise MetricsError(f"label out of range for {m} classes")

    pred1 = top_k_predictions(probs, 1)[:, 0]
    topk = top_k_predictions(probs, min(3, m))
    acc1 = float(np.mean(pred1 == labels))
    acc3 = float(np.mean(np.any(topk == labels[:, None], axis=1)))

    confusion = np.zeros((m, m), dtype=np.int64)
    np.add.at(confusion, (labels, pred1), 1)
    tp = np.diag(confusion).astype(float)
    pred_counts = confusion.sum(axis=0).astype(float)
    supports = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_counts > 0, tp / pred_counts, 0.0)
        recall = np.where(supports > 0, tp / supports, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    macro_f1 = float(f1.mean())

    return EvalReport(
        acc1=acc1,
        acc3=acc3,
        macro_f1=macro_f1,
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        supports=supports,
        class_names=class_names,
    )


def evaluate(
    predict_proba: Callable[[list[TactileTensor]], np.ndarray],
    samples: Sequence[LabeledSample],
    *,
    n_classes: int | None = None,
    class_names: list[str] | None = None,
    batch_size: int = 64,
) -> EvalReport:
    """Evaluate a probabilistic predictor over labeled samples."""
    if len(samples) == 0:
        raise MetricsError("empty split")
    probs_parts = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        probs_parts.append(np.asarray(predict_proba([s.tensor for s in chunk])))
    probs = np.concatenate(probs_parts, axis=0)
    labels = np.array([s.label for s in samples])
    return evaluate_predictions(labels, probs, n_classes=n_classes, class_names=class_names)
