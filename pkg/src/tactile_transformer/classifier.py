"""CLS-token classification head and its cross-entropy objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .encoder import EncodedSequence

_PROB_CLAMP = 1e-7


class ClassifierError(ValueError):
    pass


@dataclass
class ClassifierHead:
    """Affine map from the final [CLS] embedding to class logits."""

    weight: Tensor  # (D, M)
    bias: Tensor  # (M,)

    @property
    def n_classes(self) -> int:
        return int(self.bias.data.shape[0])


def classify(encoded: EncodedSequence | Tensor, head: ClassifierHead) -> Tensor:
    """Softmax class probabilities from the [CLS] row of the final layer."""
    if head.n_classes < 2:
        raise ClassifierError(f"need at least 2 classes, got {head.n_classes}")
    cls = encoded.cls() if isinstance(encoded, EncodedSequence) else encoded
    if not isinstance(cls, Tensor):
        cls = Tensor(cls)
    single = cls.ndim == 1
    if single:
        cls = cls.reshape(1, -1)
    if cls.data.shape[-1] != head.weight.data.shape[0]:
        raise ClassifierError(
            f"dimension mismatch: [CLS] dim {cls.data.shape[-1]},"
            f" head expects {head.weight.data.shape[0]}"
        )
    logits = cls @ head.weight + head.bias
    probs = logits.softmax(axis=-1)
    return probs.reshape(-1) if single else probs


def finetune_loss(probs: Tensor, labels) -> Tensor:
    """Cross entropy against integer labels: mean of -log p[label], clamped at 1e-7."""
    if not isinstance(probs, Tensor):
        probs = Tensor(probs)
    single = probs.ndim == 1
    p = probs.reshape(1, -1) if single else probs
    labels_arr = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    b, m = p.data.shape
    if labels_arr.shape != (b,):
        raise ClassifierError(f"expected {b} labels, got shape {labels_arr.shape}")
    if labels_arr.min() < 0 or labels_arr.max() >= m:
        raise ClassifierError(f"label out of range for {m} classes: {labels_arr}")
    picked = p[np.arange(b), labels_arr]
    return -(picked.clip(_PROB_CLAMP, 1.0).log()).mean()
