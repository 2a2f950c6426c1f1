from __future__ import annotations

import numpy as np
import pytest

from tactile_transformer.encoder import EncoderConfig
from tactile_transformer.model import TactileActionModel
from tactile_transformer.tokenizer import TubeletConfig, TubeletGrid


@pytest.fixture
def tiny_grid() -> TubeletGrid:
    # 2x2x8x8 tensor, one-frame tubelets: 16 tokens, 8 groups, 2 windows
    return TubeletGrid.for_shape((2, 2, 8, 8), TubeletConfig(frames=1, patch=4))


@pytest.fixture
def tiny_model(tiny_grid) -> TactileActionModel:
    config = EncoderConfig(layers=2, dim=8, heads=2, ff_dim=16, dropout=0.0)
    return TactileActionModel(tiny_grid, config, 3, seed=1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
