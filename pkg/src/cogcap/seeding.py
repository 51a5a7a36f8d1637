"""Deterministic seed fan-out.

A single master seed is expanded into independent per-purpose streams via
numpy's SeedSequence hash chain: rng_for(master, STREAM_TAG, *extra_keys).
Every random draw in the package goes through one of these streams, so a run
is a pure function of its config and master seed.
"""

from __future__ import annotations

import numpy as np

# stream tags; values are part of the on-disk reproducibility contract
STREAM_LATENT = 1          # per-image shared latent draws
STREAM_PRIVATE = 2         # per-image, per-modality private components
STREAM_NOISE = 3           # per-repetition sensor noise
STREAM_MIXING = 4          # dataset-level mixing matrices and temporal profiles
STREAM_EMBEDDER = 5        # frozen modality embedder weights
STREAM_ENCODER_INIT = 6    # EEG expert weight init
STREAM_PROJECTION_INIT = 7 # residual projection weight init
STREAM_SHUFFLE = 8         # epoch shuffling during alignment training
STREAM_PRIOR_INIT = 9      # prior network weight init
STREAM_PRIOR_TRAIN = 10    # timestep/noise/condition-dropout draws
STREAM_SAMPLER = 11        # prior sampler initial noise
STREAM_BOOTSTRAP = 12      # evaluation bootstrap resampling

MODALITY_CODES = {"image": 0, "text": 1, "depth": 2}


def seed_sequence(master_seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])


def rng_for(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent Generator for (master_seed, key chain)."""
    return np.random.default_rng(seed_sequence(master_seed, *keys))


def modality_code(modality: str) -> int:
    try:
        return MODALITY_CODES[modality]
    except KeyError:
        raise ValueError(f"unknown modality {modality!r}; expected one of {sorted(MODALITY_CODES)}") from None
