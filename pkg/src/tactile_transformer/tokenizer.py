"""Tubelet tokenization: carve a tactile tensor into flat space-time blocks.

A tubelet covers `frames` consecutive frames of one `patch x patch` sensor
patch. Tokens are emitted temporal-major (all patches of window 0, then
window 1, ...), with patches enumerated device-major then row-major; any
fixed order would do since downstream embeddings are index-keyed, but
row-major keeps indices easy to read when debugging.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import TactileTensor


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TubeletConfig:
    """Tubelet geometry: `frames` frames deep, `patch` sensors on a side."""

    frames: int = 5
    patch: int = 4

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise TokenizerError(f"frames must be >= 1, got {self.frames}")
        if self.patch < 1:
            raise TokenizerError(f"patch must be >= 1, got {self.patch}")

    @property
    def token_dim(self) -> int:
        return self.frames * self.patch * self.patch


@dataclass(frozen=True)
class TubeletGrid:
    """Index geometry of a tokenized tensor (shape echo plus tubelet counts)."""

    devices: int
    frames: int
    height: int
    width: int
    tubelet_frames: int
    patch: int

    @classmethod
    def for_shape(cls, shape: tuple[int, int, int, int], config: TubeletConfig) -> "TubeletGrid":
        c, t, h, w = shape
        if t % config.frames != 0:
            raise TokenizerError(f"T not divisible by L (T={t}, L={config.frames})")
        if h % config.patch != 0:
            raise TokenizerError(f"H not divisible by P (H={h}, P={config.patch})")
        if w % config.patch != 0:
            raise TokenizerError(f"W not divisible by P (W={w}, P={config.patch})")
        return cls(c, t, h, w, config.frames, config.patch)

    @property
    def patch_rows(self) -> int:
        return self.height // self.patch

    @property
    def patch_cols(self) -> int:
        return self.width // self.patch

    @property
    def n_space(self) -> int:
        return self.devices * self.patch_rows * self.patch_cols

    @property
    def n_temp(self) -> int:
        return self.frames // self.tubelet_frames

    @property
    def n_tube(self) -> int:
        return self.n_space * self.n_temp

    @property
    def token_dim(self) -> int:
        return self.tubelet_frames * self.patch * self.patch

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.devices, self.frames, self.height, self.width)

    def sequence_index(self, spatial: int, temporal: int) -> int:
        return temporal * self.n_space + spatial

    def spatial_index_of(self, sequence: int) -> int:
        return sequence % self.n_space

    def temporal_index_of(self, sequence: int) -> int:
        return sequence // self.n_space

    def spatial_indices(self) -> np.ndarray:
        """spatial index of every tubelet, in sequence order."""
        return np.tile(np.arange(self.n_space), self.n_temp)

    def temporal_indices(self) -> np.ndarray:
        """temporal index of every tubelet, in sequence order."""
        return np.repeat(np.arange(self.n_temp), self.n_space)


@dataclass(frozen=True)
class Tubelet:
    """One token: flattened (frames, patch, patch) block plus its indices."""

    values: np.ndarray
    spatial_index: int
    temporal_index: int
    sequence_index: int


def tokenize_values(values: np.ndarray, config: TubeletConfig) -> tuple[TubeletGrid, np.ndarray]:
    """Tokenize a raw (C, T, H, W) array into an (n_tube, token_dim) matrix."""
    values = np.asarray(values)
    if values.ndim != 4:
        raise TokenizerError(f"expected 4-D tensor, got shape {values.shape}")
    grid = TubeletGrid.for_shape(values.shape, config)
    c, nt, l = grid.devices, grid.n_temp, grid.tubelet_frames
    gh, gw, p = grid.patch_rows, grid.patch_cols, grid.patch
    blocks = values.reshape(c, nt, l, gh, p, gw, p)
    blocks = blocks.transpose(1, 0, 3, 5, 2, 4, 6)  # (nt, c, gh, gw, l, p, p)
    mat = blocks.reshape(grid.n_tube, grid.token_dim)
    return grid, np.ascontiguousarray(mat)


def detokenize_values(grid: TubeletGrid, mat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`tokenize_values` for a complete, ordered token matrix."""
    mat = np.asarray(mat)
    if mat.shape != (grid.n_tube, grid.token_dim):
        raise TokenizerError(
            f"expected token matrix of shape {(grid.n_tube, grid.token_dim)}, got {mat.shape}"
        )
    c, nt, l = grid.devices, grid.n_temp, grid.tubelet_frames
    gh, gw, p = grid.patch_rows, grid.patch_cols, grid.patch
    blocks = mat.reshape(nt, c, gh, gw, l, p, p)
    blocks = blocks.transpose(1, 0, 4, 2, 5, 3, 6)  # (c, nt, l, gh, p, gw, p)
    return np.ascontiguousarray(blocks.reshape(grid.shape))


def tokenize(tensor: TactileTensor, config: TubeletConfig) -> tuple[TubeletGrid, list[Tubelet]]:
    """Split a tactile tensor into its full tubelet sequence.

    Every source value lands in exactly one tubelet; sequence order is
    temporal-major (sequence_index = temporal * n_space + spatial).
    """
    grid, mat = tokenize_values(tensor.values, config)
    spatial = grid.spatial_indices()
    temporal = grid.temporal_indices()
    tubelets = [
        Tubelet(
            values=mat[i],
            spatial_index=int(spatial[i]),
            temporal_index=int(temporal[i]),
            sequence_index=i,
        )
        for i in range(grid.n_tube)
    ]
    return grid, tubelets


def detokenize(
    grid: TubeletGrid,
    tubelets: Sequence[Tubelet],
    sample_rate_hz: float = 15.0,
) -> TactileTensor:
    """Reassemble a tensor from tubelets, in any order, keyed by sequence_index."""
    mat = np.zeros((grid.n_tube, grid.token_dim))
    seen = np.zeros(grid.n_tube, dtype=bool)
    for tub in tubelets:
        i = tub.sequence_index
        if i < 0 or i >= grid.n_tube:
            raise TokenizerError(f"sequence index {i} outside grid of {grid.n_tube} tubelets")
        if seen[i]:
            raise TokenizerError(f"duplicate index {i}")
        values = np.asarray(tub.values).reshape(-1)
        if values.size != grid.token_dim:
            raise TokenizerError(
                f"tubelet {i} has {values.size} values, expected {grid.token_dim}"
            )
        mat[i] = values
        seen[i] = True
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise TokenizerError(f"missing index {missing}")
    return TactileTensor(detokenize_values(grid, mat), sample_rate_hz=sample_rate_hz)
