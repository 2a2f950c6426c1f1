"""Deterministic RNG stream derivation.

Every source of randomness in a run is a generator seeded by
(master seed, stream id, *context ints), so any execution order — serial,
parallel, or resumed mid-run — reproduces identical draws.
"""
from __future__ import annotations

import numpy as np

STREAM_INIT = 1  # model weight initialization
STREAM_SHUFFLE = 2  # (epoch,) training-order permutation
STREAM_SAMPLE = 3  # (epoch, sample_id) mask plan + pair sampling
STREAM_DROPOUT = 4  # (epoch, step) dropout masks
STREAM_BALANCE = 5  # train-split balancing


def seed_sequence(*keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(k) for k in keys])


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*keys))
