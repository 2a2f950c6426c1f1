"""Token embeddings: learned tubelet projection plus three sinusoidal tables.

Each token row is the sum of four parts: a trainable affine projection of the
flattened tubelet values, a position entry keyed by sequence index, a spatial
entry shared by all tubelets from the same sensor patch, and a temporal entry
shared by all tubelets from the same frame window. A [CLS] row is prepended,
built from four separately learned vectors (one per embedding family).

Tables are fixed (never trained) and use the classical sinusoidal form with
1-based indices: entry (k, 2d) = sin(k / 10000^(2d/D)) and entry (k, 2d+1) =
cos(k / 10000^(2d/D)). Internal 0-based indices are shifted by +1 at lookup.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from .tokenizer import Tubelet, TubeletGrid


class EmbeddingError(ValueError):
    pass


def sinusoidal(k: int, dim: int) -> np.ndarray:
    """One sinusoidal encoding row for 1-based index `k`; `dim` must be even."""
    if k < 1:
        raise EmbeddingError(f"index k must be >= 1, got {k}")
    if dim < 2 or dim % 2 != 0:
        raise EmbeddingError(f"embedding dim must be a positive even number, got {dim}")
    even = np.arange(0, dim, 2, dtype=np.float64)
    angles = k / np.power(10000.0, even / dim)
    row = np.empty(dim)
    row[0::2] = np.sin(angles)
    row[1::2] = np.cos(angles)
    return row


def sinusoidal_table(rows: int, dim: int) -> np.ndarray:
    """Stacked sinusoidal rows for k = 1..rows."""
    if rows < 1:
        raise EmbeddingError(f"table needs at least one row, got {rows}")
    if dim < 2 or dim % 2 != 0:
        raise EmbeddingError(f"embedding dim must be a positive even number, got {dim}")
    k = np.arange(1, rows + 1, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = k / np.power(10000.0, even / dim)
    table = np.empty((rows, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


@dataclass(frozen=True)
class SinusoidalTable:
    """A fixed encoding table over `rows` indices; deterministic, no trainable state."""

    rows: int
    dim: int
    entries: np.ndarray

    @classmethod
    def build(cls, rows: int, dim: int) -> "SinusoidalTable":
        table = sinusoidal_table(rows, dim)
        table.setflags(write=False)
        return cls(rows=rows, dim=dim, entries=table)

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        """Rows for 0-based indices (the +1 shift is baked into the table)."""
        return self.entries[np.asarray(indices, dtype=np.intp)]


@dataclass
class EmbeddingSet:
    """Everything needed to turn a tubelet sequence into encoder input rows."""

    projection_weight: Tensor  # (token_dim, D)
    projection_bias: Tensor  # (D,)
    position_table: SinusoidalTable  # over n_tube sequence indices
    spatial_table: SinusoidalTable  # over n_space patch indices
    temporal_table: SinusoidalTable  # over n_temp window indices
    cls_tubelet: Tensor
    cls_position: Tensor
    cls_spatial: Tensor
    cls_temporal: Tensor
    use_spatial: bool = True
    use_temporal: bool = True

    @property
    def dim(self) -> int:
        return int(self.projection_bias.data.shape[0])

    def check_grid(self, grid: TubeletGrid) -> None:
        if self.position_table.rows != grid.n_tube:
            raise EmbeddingError(
                f"position table has {self.position_table.rows} rows, grid needs {grid.n_tube}"
            )
        if self.spatial_table.rows != grid.n_space:
            raise EmbeddingError(
                f"spatial table has {self.spatial_table.rows} rows, grid needs {grid.n_space}"
            )
        if self.temporal_table.rows != grid.n_temp:
            raise EmbeddingError(
                f"temporal table has {self.temporal_table.rows} rows, grid needs {grid.n_temp}"
            )
        if self.projection_weight.data.shape[0] != grid.token_dim:
            raise EmbeddingError(
                f"projection expects {self.projection_weight.data.shape[0]} values per tubelet,"
                f" grid produces {grid.token_dim}"
            )

    def cls_row(self) -> Tensor:
        row = self.cls_tubelet + self.cls_position
        if self.use_spatial:
            row = row + self.cls_spatial
        if self.use_temporal:
            row = row + self.cls_temporal
        return row


def project_tubelet(values, emb: EmbeddingSet) -> Tensor:
    """Trainable affine map of flattened tubelet values into embedding space."""
    t = values if isinstance(values, Tensor) else Tensor(values)
    if t.data.shape[-1] != emb.projection_weight.data.shape[0]:
        raise EmbeddingError(
            f"length mismatch: got {t.data.shape[-1]} values,"
            f" projection expects {emb.projection_weight.data.shape[0]}"
        )
    flat = t if t.ndim >= 2 else t.reshape(1, -1)
    out = flat @ emb.projection_weight + emb.projection_bias
    return out if t.ndim >= 2 else out.reshape(-1)


def compose_rows(
    values: Tensor,
    seq_idx: np.ndarray,
    spatial_idx: np.ndarray,
    temporal_idx: np.ndarray,
    emb: EmbeddingSet,
) -> Tensor:
    """Batched composition: values (..., n, token_dim) -> rows (..., n+1, D).

    Row 0 is the [CLS] row; rows 1..n follow the given index arrays. Table
    entries are constants, so gradients flow only through the projection and
    the CLS vectors.
    """
    if not isinstance(values, Tensor):
        values = Tensor(values)
    n = values.data.shape[-2]
    if not (len(seq_idx) == len(spatial_idx) == len(temporal_idx) == n):
        raise EmbeddingError("index arrays must match the number of tubelets")
    tokens = values @ emb.projection_weight + emb.projection_bias
    fixed = emb.position_table.lookup(seq_idx)
    if emb.use_spatial:
        fixed = fixed + emb.spatial_table.lookup(spatial_idx)
    if emb.use_temporal:
        fixed = fixed + emb.temporal_table.lookup(temporal_idx)
    tokens = tokens + fixed
    lead = values.data.shape[:-2]
    cls = emb.cls_row().reshape(*([1] * len(lead)), 1, emb.dim)
    cls = cls + np.zeros((*lead, 1, emb.dim))
    return concat([cls, tokens], axis=-2)


def compose_input(tubelets: list[Tubelet], emb: EmbeddingSet, grid: TubeletGrid | None = None) -> Tensor:
    """Compose a single sample's (n_tube+1, D) encoder input from its tubelets."""
    if grid is not None:
        emb.check_grid(grid)
    values = Tensor(np.stack([np.asarray(t.values).reshape(-1) for t in tubelets]))
    seq = np.array([t.sequence_index for t in tubelets], dtype=np.intp)
    spatial = np.array([t.spatial_index for t in tubelets], dtype=np.intp)
    temporal = np.array([t.temporal_index for t in tubelets], dtype=np.intp)
    if seq.max(initial=0) >= emb.position_table.rows:
        raise EmbeddingError(
            f"sequence index {int(seq.max())} exceeds position table ({emb.position_table.rows} rows)"
        )
    if spatial.max(initial=0) >= emb.spatial_table.rows:
        raise EmbeddingError(
            f"spatial index {int(spatial.max())} exceeds spatial table ({emb.spatial_table.rows} rows)"
        )
    if temporal.max(initial=0) >= emb.temporal_table.rows:
        raise EmbeddingError(
            f"temporal index {int(temporal.max())} exceeds temporal table ({emb.temporal_table.rows} rows)"
        )
    return compose_rows(values, seq, spatial, temporal, emb)
