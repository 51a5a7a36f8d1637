"""Frozen per-modality target embedders and their trainable residual
projections.

Each modality gets a fixed random two-layer network standing in for a large
pretrained feature extractor. It never trains; all adaptation happens in a
small residual projection stacked on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import autodiff as ad
from .seeding import MODALITY_CODES, STREAM_EMBEDDER, STREAM_PROJECTION_INIT, rng_for


@dataclass
class FrozenEmbedder:
    """Two-layer GELU network with fixed random weights, unit-norm outputs."""

    modality: str
    d_raw: int
    d_out: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, targets: np.ndarray) -> np.ndarray:
        x = np.asarray(targets, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_raw:
            raise ad.ShapeError(f"targets {x.shape} do not match raw dim ({self.d_raw},)")
        h = x @ self.w1 + self.b1
        h = 0.5 * h * (1.0 + erf(h / np.sqrt(2.0)))
        out = h @ self.w2 + self.b2
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ad.NumericalError("frozen embedder produced a zero vector")
        return out / norms


@dataclass
class ResidualProjection:
    """x + linear(gelu(x)), then layer-norm. The only trainable piece."""

    weight: ad.Tensor
    bias: ad.Tensor
    gamma: ad.Tensor
    beta: ad.Tensor

    def params(self) -> list[ad.Tensor]:
        return [self.weight, self.bias, self.gamma, self.beta]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.matmul(ad.gelu(x), self.weight) + self.bias
        return ad.layer_norm(x + h, self.gamma, self.beta)


def embedder_init(modality: str, seed: int, d_raw: int, d_out: int) -> tuple[FrozenEmbedder, ResidualProjection]:
    """Build the frozen embedder and a fresh projection for one modality.

    Deterministic per (modality, seed); the three modalities draw from
    distinct streams of the same master seed.
    """
    if modality not in MODALITY_CODES:
        raise ValueError(f"unknown modality {modality!r}")
    if d_raw < 1 or d_out < 1:
        raise ValueError(f"bad dims d_raw={d_raw} d_out={d_out}")
    code = MODALITY_CODES[modality]
    hidden = 2 * d_out

    rng = rng_for(seed, STREAM_EMBEDDER, code)
    frozen = FrozenEmbedder(
        modality=modality,
        d_raw=d_raw,
        d_out=d_out,
        w1=rng.uniform(-1.0, 1.0, size=(d_raw, hidden)) / np.sqrt(d_raw),
        b1=np.zeros(hidden),
        w2=rng.uniform(-1.0, 1.0, size=(hidden, d_out)) / np.sqrt(hidden),
        b2=np.zeros(d_out),
    )

    rng = rng_for(seed, STREAM_PROJECTION_INIT, code)
    projection = ResidualProjection(
        weight=ad.Tensor(rng.uniform(-1.0, 1.0, size=(d_out, d_out)) / np.sqrt(d_out), requires_grad=True),
        bias=ad.Tensor(np.zeros(d_out), requires_grad=True),
        gamma=ad.Tensor(np.ones(d_out), requires_grad=True),
        beta=ad.Tensor(np.zeros(d_out), requires_grad=True),
    )
    return frozen, projection


def embed_modality(frozen: FrozenEmbedder, projection: ResidualProjection, targets: np.ndarray) -> ad.Tensor:
    """Raw targets to unit-norm modality embeddings.

    Frozen map, then residual projection, then L2 normalization. Gradient
    flows only into the projection.
    """
    base = ad.Tensor(frozen(targets))
    return ad.l2_normalize(projection(base))
