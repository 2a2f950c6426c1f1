"""Full model assembly: embeddings, encoder stack and task heads.

One ParameterStore holds every trainable array. Registration order is fixed
and the initializer draws from a single seeded stream in that order, so two
models built with the same seed are bit-identical. Spatial/temporal embedding
toggles never change the parameter set — disabled families simply drop out of
the composition — which keeps checkpoints structurally compatible across
ablation strategies.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ParameterStore, Tensor
from .embedding import EmbeddingSet, SinusoidalTable, compose_rows
from .encoder import EncodedSequence, EncoderConfig, encode, init_encoder_params
from .seeding import STREAM_INIT, rng_for
from .tokenizer import TubeletGrid

_INIT_STD = 0.02


class TactileActionModel:
    """Encoder over tubelet tokens with reconstruction, order and class heads."""

    def __init__(
        self,
        grid: TubeletGrid,
        encoder_config: EncoderConfig,
        n_classes: int,
        *,
        use_spatial: bool = True,
        use_temporal: bool = True,
        seed: int = 0,
    ) -> None:
        if n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {n_classes}")
        self.grid = grid
        self.encoder_config = encoder_config
        self.n_classes = int(n_classes)
        self.use_spatial = bool(use_spatial)
        self.use_temporal = bool(use_temporal)
        self.seed = int(seed)

        d = encoder_config.dim
        tok = grid.token_dim
        rng = rng_for(seed, STREAM_INIT)
        store = ParameterStore()
        store.register("embed.projection.weight", _INIT_STD * rng.standard_normal((tok, d)))
        store.register("embed.projection.bias", np.zeros(d))
        for family in ("tubelet", "position", "spatial", "temporal"):
            store.register(f"embed.cls.{family}", _INIT_STD * rng.standard_normal(d))
        store.register("embed.mask_token", _INIT_STD * rng.standard_normal(tok))
        init_encoder_params(store, encoder_config, rng)
        store.register("head.recon.weight", _INIT_STD * rng.standard_normal((d, tok)))
        store.register("head.recon.bias", np.zeros(tok))
        store.register("head.order.weight", _INIT_STD * rng.standard_normal((2 * d, 1)))
        store.register("head.classifier.weight", _INIT_STD * rng.standard_normal((d, n_classes)))
        store.register("head.classifier.bias", np.zeros(n_classes))
        store.freeze()
        self.params = store

        self._seq_idx = np.arange(grid.n_tube, dtype=np.intp)
        self._spatial_idx = grid.spatial_indices().astype(np.intp)
        self._temporal_idx = grid.temporal_indices().astype(np.intp)
        self._position_table = SinusoidalTable.build(grid.n_tube, d)
        self._spatial_table = SinusoidalTable.build(grid.n_space, d)
        self._temporal_table = SinusoidalTable.build(grid.n_temp, d)

    # ------------------------------------------------------------------

    @property
    def embeddings(self) -> EmbeddingSet:
        p = self.params
        return EmbeddingSet(
            projection_weight=p["embed.projection.weight"],
            projection_bias=p["embed.projection.bias"],
            position_table=self._position_table,
            spatial_table=self._spatial_table,
            temporal_table=self._temporal_table,
            cls_tubelet=p["embed.cls.tubelet"],
            cls_position=p["embed.cls.position"],
            cls_spatial=p["embed.cls.spatial"],
            cls_temporal=p["embed.cls.temporal"],
            use_spatial=self.use_spatial,
            use_temporal=self.use_temporal,
        )

    @property
    def mask_token(self) -> Tensor:
        return self.params["embed.mask_token"]

    def compose(self, values) -> Tensor:
        """Token values (..., n_tube, token_dim) -> encoder input (..., n_tube+1, D)."""
        if not isinstance(values, Tensor):
            values = Tensor(values)
        if values.data.shape[-2:] != (self.grid.n_tube, self.grid.token_dim):
            raise ValueError(
                f"expected token values (..., {self.grid.n_tube}, {self.grid.token_dim}),"
                f" got {values.data.shape}"
            )
        return compose_rows(values, self._seq_idx, self._spatial_idx, self._temporal_idx, self.embeddings)

    def forward(
        self,
        values,
        *,
        dropout_rng: np.random.Generator | None = None,
        collect_attention: bool = False,
    ) -> EncodedSequence:
        """Compose and encode token values; row 0 of the output is [CLS]."""
        rows = self.compose(values)
        return encode(
            rows,
            self.encoder_config,
            self.params,
            dropout_rng=dropout_rng,
            collect_attention=collect_attention,
        )

    # ------------------------------------------------------------------
    # heads

    def reconstruction(self, encoded: EncodedSequence) -> Tensor:
        """Predicted tubelet values (..., n_tube, token_dim) from encoder outputs."""
        tokens = encoded.tokens[..., 1:, :]
        return tokens @ self.params["head.recon.weight"] + self.params["head.recon.bias"]

    def class_logits(self, encoded: EncodedSequence) -> Tensor:
        cls = encoded.cls()
        single = cls.ndim == 1
        if single:
            cls = cls.reshape(1, -1)
        out = cls @ self.params["head.classifier.weight"] + self.params["head.classifier.bias"]
        return out.reshape(-1) if single else out

    def class_probs(self, encoded: EncodedSequence) -> Tensor:
        return self.class_logits(encoded).softmax(axis=-1)
