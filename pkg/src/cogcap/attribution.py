"""Gradient-weighted activation mapping over the temporal-conv feature maps,
projected back to electrode channels and input time.

The target scalar is the cosine between each trial's EEG embedding and its
matched modality embedding, the contrastive analog of a class logit. Feature
maps are weighted by globally averaged gradients and rectified; the channel
profile is additionally weighted by the spatial kernel's absolute weights
(our construction for mapping feature relevance back to electrodes), and the
time profile is spread back through the temporal kernel's receptive field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import encoder as enc


@dataclass
class SaliencyMap:
    """Per-channel and per-time attribution, each non-negative and summing
    to 1 unless the map is flagged all-zero."""

    channel_saliency: np.ndarray
    time_saliency: np.ndarray
    modality: str
    n_trials: int
    all_zero: bool = False

    def __post_init__(self):
        self.channel_saliency = np.asarray(self.channel_saliency, dtype=np.float64)
        self.time_saliency = np.asarray(self.time_saliency, dtype=np.float64)
        if self.channel_saliency.ndim != 1 or self.time_saliency.ndim != 1:
            raise ad.ShapeError("saliency vectors must be 1-d")
        if self.channel_saliency.min() < 0 or self.time_saliency.min() < 0:
            raise ValueError("saliency must be non-negative")

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "n_trials": int(self.n_trials),
            "all_zero": bool(self.all_zero),
            "channel_saliency": self.channel_saliency.tolist(),
            "time_saliency": self.time_saliency.tolist(),
        }


def _normalized(profile: np.ndarray) -> np.ndarray:
    total = profile.sum()
    return profile / total if total > 0 else np.zeros_like(profile)


def gradcam(
    cfg: enc.EncoderConfig,
    params: dict[str, ad.Tensor],
    signals: np.ndarray,
    target_embeddings: np.ndarray,
    modality: str,
) -> SaliencyMap:
    """Attribute matched-pair cosine similarity to channels and time.

    Runs the encoder in eval mode, takes gradients of the summed per-trial
    cosines with respect to the temporal-conv activations, weights each
    feature map by its globally pooled gradient, rectifies, and reduces.
    A map with zero gradient everywhere comes back flagged, not as an error.
    """
    signals = np.asarray(signals, dtype=np.float64)
    targets = np.asarray(target_embeddings, dtype=np.float64)
    if signals.ndim != 3 or targets.ndim != 2 or signals.shape[0] != targets.shape[0]:
        raise ad.ShapeError(f"signals {signals.shape} vs targets {targets.shape}")

    collected: dict = {}
    raw = enc.forward(cfg, params, signals, train=False, collect=collected)
    if raw.shape != targets.shape:
        raise ad.ShapeError(f"embeddings {raw.shape} vs targets {targets.shape}")
    if not np.linalg.norm(raw.data, axis=-1).any():
        # dead encoder (e.g. zeroed spatial conv): cosine target is undefined
        # and every gradient vanishes, so flag instead of raising
        return SaliencyMap(
            channel_saliency=np.zeros(cfg.n_channels),
            time_saliency=np.zeros(cfg.n_samples),
            modality=modality,
            n_trials=signals.shape[0],
            all_zero=True,
        )
    emb = ad.l2_normalize(raw)
    score = ad.tsum(emb * ad.Tensor(targets))  # sum of per-trial cosines
    activations = collected["tconv"]  # (N, F, C, T')
    d_act = ad.grad(score, [activations])[0].data

    alpha = d_act.mean(axis=(2, 3))  # (N, F) globally pooled gradients
    cam = np.einsum("nf,nfct->nct", alpha, activations.data)
    cam = np.maximum(cam, 0.0)

    # spatial kernel magnitude maps feature relevance back onto electrodes
    kappa = np.abs(params["sconv_w"].data).sum(axis=(0, 1))[:, 0]  # (C,)
    channel_profile = cam.sum(axis=(0, 2)) * kappa

    # each conv position t' covers input samples t' .. t'+k-1
    time_profile = cam.sum(axis=(0, 1))  # (T',)
    k = cfg.temporal_kernel
    time_full = np.zeros(cfg.n_samples)
    for t_prime, mass in enumerate(time_profile):
        time_full[t_prime:t_prime + k] += mass / k

    total = cam.sum()
    return SaliencyMap(
        channel_saliency=_normalized(channel_profile),
        time_saliency=_normalized(time_full),
        modality=modality,
        n_trials=signals.shape[0],
        all_zero=bool(total == 0.0),
    )


def average_saliency(maps: list[SaliencyMap]) -> SaliencyMap:
    """Elementwise mean of same-shape, same-modality maps, renormalized."""
    if not maps:
        raise ValueError("average over zero maps")
    first = maps[0]
    for m in maps[1:]:
        if m.modality != first.modality:
            raise ValueError(f"mixed modalities {first.modality!r} vs {m.modality!r}")
        if m.channel_saliency.shape != first.channel_saliency.shape \
                or m.time_saliency.shape != first.time_saliency.shape:
            raise ad.ShapeError("saliency maps differ in shape")
    channel = np.mean([m.channel_saliency for m in maps], axis=0)
    time = np.mean([m.time_saliency for m in maps], axis=0)
    return SaliencyMap(
        channel_saliency=_normalized(channel),
        time_saliency=_normalized(time),
        modality=first.modality,
        n_trials=sum(m.n_trials for m in maps),
        all_zero=bool(channel.sum() == 0.0 and time.sum() == 0.0),
    )
