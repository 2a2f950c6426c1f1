"""Self-supervised objectives: spatial-group masked reconstruction and
temporal order discrimination.

Masking is spatial-based: whole sensor groups are hidden, i.e. every tubelet
sharing a chosen spatial index is masked across all frame windows. Masked
positions keep their position/spatial/temporal embeddings; only the input to
the tubelet projection is swapped for one learned mask vector, so sequence
length is unchanged and order pairs can be sampled from the same forward
pass. Order pairs are drawn from unmasked tubelets with distinct temporal
indices; the label is 1 when the first tubelet was collected earlier.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, concat
from .data import TactileTensor
from .model import TactileActionModel
from .tokenizer import Tubelet, TubeletConfig, TubeletGrid, tokenize_values

_PROB_CLAMP = 1e-7


class PretrainError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPlan:
    """The chosen spatial groups and the tubelet index set they induce."""

    ratio: float
    masked_groups: tuple[int, ...]
    masked_tubelets: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.masked_tubelets)

    def mask_vector(self, grid: TubeletGrid) -> np.ndarray:
        """Boolean vector over sequence indices, True where masked."""
        out = np.zeros(grid.n_tube, dtype=bool)
        out[list(self.masked_tubelets)] = True
        return out


def plan_spatial_mask(grid: TubeletGrid, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Pick round(ratio * n_space) spatial groups uniformly at random.

    Every tubelet of a chosen group is masked, none of any other group.
    """
    if not (0.0 <= ratio < 1.0):
        raise PretrainError(f"mask ratio must be in [0, 1), got {ratio}")
    n_groups = int(np.floor(ratio * grid.n_space + 0.5))
    groups = np.sort(rng.choice(grid.n_space, size=n_groups, replace=False))
    spatial = grid.spatial_indices()
    masked = np.flatnonzero(np.isin(spatial, groups))
    return MaskPlan(
        ratio=float(ratio),
        masked_groups=tuple(int(g) for g in groups),
        masked_tubelets=tuple(int(i) for i in masked),
    )


def apply_mask(
    tubelets: Sequence[Tubelet], plan: MaskPlan, mask_token: np.ndarray | Tensor
) -> list[Tubelet]:
    """Replace masked tubelets' values with the learned mask vector.

    Index fields are untouched, so masked rows keep their position, spatial
    and temporal embeddings downstream.
    """
    token = mask_token.data if isinstance(mask_token, Tensor) else np.asarray(mask_token)
    masked = set(plan.masked_tubelets)
    if tubelets and token.shape != tubelets[0].values.shape:
        raise PretrainError(
            f"mask token shape {token.shape} does not match tubelet values"
            f" {tubelets[0].values.shape}"
        )
    out: list[Tubelet] = []
    for t in tubelets:
        if t.sequence_index in masked:
            out.append(
                Tubelet(
                    values=token.copy(),
                    spatial_index=t.spatial_index,
                    temporal_index=t.temporal_index,
                    sequence_index=t.sequence_index,
                )
            )
        else:
            out.append(t)
    return out


def masked_input_values(values: Tensor | np.ndarray, mask: np.ndarray, mask_token: Tensor) -> Tensor:
    """Differentiable mask mix: values (..., n, tok) with mask (..., n, 1) in {0,1}."""
    if not isinstance(values, Tensor):
        values = Tensor(values)
    mask = np.asarray(mask, dtype=np.float64)
    return values * (1.0 - mask) + mask_token * mask


def mtr_loss(
    original: TactileTensor,
    reconstructed: Mapping[int, np.ndarray],
    plan: MaskPlan,
    config: TubeletConfig,
) -> float:
    """Mean over masked tubelets of the mean squared error over their values.

    `reconstructed` is keyed by sequence index, so tubelet order is
    irrelevant; a reconstruction must be present for every masked index.
    """
    if plan.count == 0:
        raise PretrainError("nothing masked")
    _, targets = tokenize_values(original.values, config)
    total = 0.0
    for idx in plan.masked_tubelets:
        if idx not in reconstructed:
            raise PretrainError(f"no reconstruction for masked tubelet {idx}")
        pred = np.asarray(reconstructed[idx], dtype=np.float64).reshape(-1)
        diff = pred - targets[idx]
        total += float(np.mean(diff * diff))
    return total / plan.count


def mtr_loss_tensor(targets: np.ndarray, reconstruction: Tensor, mask: np.ndarray) -> Tensor:
    """Batched differentiable twin of :func:`mtr_loss`.

    targets (..., n, tok) are constants, reconstruction is the head output,
    mask (..., n, 1) flags masked rows; loss is averaged over masked values.
    """
    mask = np.asarray(mask, dtype=np.float64)
    n_masked_values = float(mask.sum()) * targets.shape[-1]
    if n_masked_values == 0:
        raise PretrainError("nothing masked")
    diff = reconstruction - targets
    return (diff * diff * mask).sum() / n_masked_values


@dataclass(frozen=True)
class PairBatch:
    """Tubelet index pairs with earlier-than labels (1 iff first is earlier)."""

    first: np.ndarray
    second: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.first)

    def __iter__(self):
        return iter(zip(self.first.tolist(), self.second.tolist(), self.labels.tolist()))


def sample_pairs(
    grid: TubeletGrid, plan: MaskPlan, n_comp: int, rng: np.random.Generator
) -> PairBatch:
    """Sample distinct ordered pairs of unmasked tubelets from different windows.

    Scaled down to the number of feasible pairs when n_comp exceeds it.
    """
    mask = plan.mask_vector(grid)
    unmasked = np.flatnonzero(~mask)
    temporal = grid.temporal_indices()
    windows = np.unique(temporal[unmasked])
    if unmasked.size < 2 or windows.size < 2:
        raise PretrainError(
            "cannot sample order pairs: all unmasked tubelets share one temporal index"
        )
    per_window = np.array([np.sum(temporal[unmasked] == w) for w in windows])
    total = unmasked.size
    feasible = int(total * total - np.sum(per_window * per_window))
    n = min(int(n_comp), feasible)
    if n < 1:
        raise PretrainError("cannot sample order pairs: no feasible pair")

    chosen: set[tuple[int, int]] = set()
    first: list[int] = []
    second: list[int] = []
    attempts = 0
    max_attempts = 200 * n + 1000
    while len(first) < n and attempts < max_attempts:
        attempts += 1
        i, j = rng.choice(unmasked, size=2, replace=True)
        i, j = int(i), int(j)
        if temporal[i] == temporal[j] or (i, j) in chosen:
            continue
        chosen.add((i, j))
        first.append(i)
        second.append(j)
    if len(first) < n:
        # tiny feasible sets: fall back to explicit enumeration
        pool = [
            (int(i), int(j))
            for i in unmasked
            for j in unmasked
            if temporal[i] != temporal[j] and (int(i), int(j)) not in chosen
        ]
        take = rng.permutation(len(pool))[: n - len(first)]
        for t in sorted(take):
            first.append(pool[t][0])
            second.append(pool[t][1])
    first_arr = np.asarray(first, dtype=np.intp)
    second_arr = np.asarray(second, dtype=np.intp)
    labels = (temporal[first_arr] < temporal[second_arr]).astype(np.float64)
    return PairBatch(first=first_arr, second=second_arr, labels=labels)


def order_probabilities(
    encodings: Tensor, first: np.ndarray, second: np.ndarray, order_weight: Tensor
) -> Tensor:
    """sigmoid(W (E_i ++ E_j)) for each pair; indices are tubelet sequence indices.

    `encodings` is the encoder output including the [CLS] row at 0, so token
    rows sit at sequence index + 1.
    """
    first = np.asarray(first, dtype=np.intp) + 1
    second = np.asarray(second, dtype=np.intp) + 1
    if encodings.ndim == 2:
        e_i = encodings[first, :]
        e_j = encodings[second, :]
    elif encodings.ndim == 3:
        b = np.arange(encodings.data.shape[0])[:, None]
        e_i = encodings[b, first]
        e_j = encodings[b, second]
    else:
        raise PretrainError(f"expected (n+1, D) or (B, n+1, D) encodings, got {encodings.shape}")
    feats = concat([e_i, e_j], axis=-1)
    logits = feats @ order_weight  # (..., pairs, 1)
    return logits.sigmoid()


def temporal_loss(batch: PairBatch, encodings, order_weight: Tensor) -> Tensor:
    """Binary cross-entropy over the pair batch, averaged, probabilities clamped."""
    if len(batch) == 0:
        raise PretrainError("empty pair batch")
    tokens = encodings.tokens if hasattr(encodings, "tokens") else encodings
    probs = order_probabilities(tokens, batch.first, batch.second, order_weight)
    labels = batch.labels.reshape(probs.data.shape)
    return bce_loss(probs, labels)


def bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    p = probs.clip(_PROB_CLAMP, 1.0 - _PROB_CLAMP)
    labels = np.asarray(labels, dtype=np.float64)
    losses = -(labels * p.log() + (1.0 - labels) * (1.0 - p).log())
    return losses.mean()


@dataclass
class PretrainStepResult:
    total: float
    mtr: float
    temporal: float
    loss: Tensor
    gradients: dict[str, np.ndarray]


def pretrain_step(
    model: TactileActionModel,
    values: np.ndarray,
    *,
    beta: float,
    mask_ratio: float,
    n_comp: int,
    sample_rngs: Sequence[np.random.Generator],
    temporal_task: bool = True,
    dropout_rng: np.random.Generator | None = None,
) -> PretrainStepResult:
    """One combined pretraining step over a batch of token matrices.

    `values` has shape (B, n_tube, token_dim) and already holds the
    reconstruction targets (normalized signal values). Gradients are left on
    the model parameters and also returned by name.
    """
    if beta < 0:
        raise PretrainError(f"beta must be >= 0, got {beta}")
    values = np.asarray(values, dtype=np.float64)
    b = values.shape[0]
    if len(sample_rngs) != b:
        raise PretrainError(f"need one rng per sample: got {len(sample_rngs)} for batch {b}")
    grid = model.grid

    plans = [plan_spatial_mask(grid, mask_ratio, rng) for rng in sample_rngs]
    mask = np.stack([p.mask_vector(grid) for p in plans]).astype(np.float64)[..., None]

    masked_values = masked_input_values(values, mask, model.mask_token)
    encoded = model.forward(masked_values, dropout_rng=dropout_rng)
    recon = model.reconstruction(encoded)
    loss_mtr = mtr_loss_tensor(values, recon, mask)

    if temporal_task and beta > 0:
        pairs = [sample_pairs(grid, plans[i], n_comp, sample_rngs[i]) for i in range(b)]
        n_pairs = min(len(p) for p in pairs)
        first = np.stack([p.first[:n_pairs] for p in pairs])
        second = np.stack([p.second[:n_pairs] for p in pairs])
        labels = np.stack([p.labels[:n_pairs] for p in pairs])[..., None]
        probs = order_probabilities(
            encoded.tokens, first, second, model.params["head.order.weight"]
        )
        loss_temp = bce_loss(probs, labels)
        total = loss_mtr + beta * loss_temp
        temporal_value = loss_temp.item()
    else:
        total = loss_mtr
        temporal_value = 0.0

    model.params.zero_grad()
    total.backward()
    return PretrainStepResult(
        total=total.item(),
        mtr=loss_mtr.item(),
        temporal=temporal_value,
        loss=total,
        gradients=model.params.gradients(),
    )
