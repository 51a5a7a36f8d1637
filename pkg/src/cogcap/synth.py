"""Synthetic EEG/stimulus generator and the fixed preprocessing chain.

Generative model, all draws keyed off one master seed:
  * each stimulus image (one per train concept x image slot, one per test
    concept) owns a shared latent s ~ N(0, I_L)
  * raw modality target for modality m:
        normalize(A_m @ [sqrt(1-f) * s ; sqrt(f) * p_m])
    with A_m a fixed square mixing matrix, p_m a per-image private vector and
    f = modality_private_frac. f=0 makes targets pure functions of s; f=1
    makes them independent of the EEG.
  * EEG repetition: W @ (s * tau) + (1/sqrt(snr)) * noise, where tau stacks
    one unit-RMS temporal profile per latent coordinate (silent before the
    stimulus onset at one fifth of the raw window) and W mixes latents into
    channels at unit signal variance.

Preprocessing runs in a fixed order: baseline correction, block-average
downsampling, shrinkage whitening fitted on train trials, and (test only)
repetition averaging. Every step is linear, so averaging and whitening
commute.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from cogcap import seeding
from cogcap import serialization as ser

MODALITIES = ("image", "text", "depth")

META_COLUMNS = ("concept", "image_index", "repetition", "subject")


class DataError(ValueError):
    """Invalid generation config or malformed dataset."""


@dataclass
class GenerationConfig:
    """Desk-scale defaults: 64x2x4 train trials, 16x1x20 test trials."""

    n_concepts_train: int = 64
    n_images_per_concept: int = 2
    n_repetitions: int = 4
    n_concepts_test: int = 16
    n_test_repetitions: int = 20
    n_channels: int = 16
    n_samples_raw: int = 200
    latent_dim: int = 16
    snr: float = 4.0
    modality_private_frac: float = 0.25
    # acceptance apparatus: restrict latent signal to these channels
    signal_channels: list[int] | None = None
    # acceptance apparatus: per-modality latent blocks routed to disjoint
    # channel groups, so each modality embeds complementary information
    disjoint_modality_channels: bool = False

    def __post_init__(self):
        for name in ("n_concepts_train", "n_images_per_concept", "n_repetitions",
                     "n_concepts_test", "n_test_repetitions", "n_channels",
                     "n_samples_raw", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"{name} must be >= 1")
        if not (self.snr > 0):
            raise DataError(f"snr must be positive, got {self.snr}")
        if not (0.0 <= self.modality_private_frac <= 1.0):
            raise DataError(f"modality_private_frac must lie in [0, 1], got {self.modality_private_frac}")
        if self.signal_channels is not None:
            bad = [c for c in self.signal_channels if not (0 <= int(c) < self.n_channels)]
            if bad or not self.signal_channels:
                raise DataError(f"signal_channels out of range for {self.n_channels} channels: {bad}")
        if self.disjoint_modality_channels:
            if self.n_channels < len(MODALITIES) or self.latent_dim < len(MODALITIES):
                raise DataError("disjoint_modality_channels needs at least one channel and latent per modality")

    @property
    def raw_target_dim(self) -> int:
        return 2 * self.latent_dim

    @property
    def stimulus_onset(self) -> int:
        return self.n_samples_raw // 5

    @property
    def n_train_images(self) -> int:
        return self.n_concepts_train * self.n_images_per_concept

    @property
    def n_images_total(self) -> int:
        # one image per test concept
        return self.n_train_images + self.n_concepts_test

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EEGTrial:
    signal: np.ndarray  # (C, T_raw)
    concept: int
    image_index: int
    repetition: int
    subject: int = 0


@dataclass
class SynthDataset:
    config: GenerationConfig
    seed: int
    train_signals: np.ndarray   # (N_train, C, T_raw)
    train_meta: np.ndarray      # (N_train, 4) int64, columns META_COLUMNS
    test_signals: np.ndarray
    test_meta: np.ndarray
    modality_targets: dict[str, np.ndarray] = field(default_factory=dict)  # modality -> (n_images_total, 2L)

    @property
    def train_image_indices(self) -> np.ndarray:
        return self.train_meta[:, 1]

    @property
    def test_image_indices(self) -> np.ndarray:
        return self.test_meta[:, 1]


def _blocks(total: int, parts: int) -> list[np.ndarray]:
    """Split range(total) into near-equal contiguous index blocks."""
    sizes = [total // parts + (1 if i < total % parts else 0) for i in range(parts)]
    out, start = [], 0
    for s in sizes:
        out.append(np.arange(start, start + s))
        start += s
    return out


def _mixing(cfg: GenerationConfig, seed: int):
    """Dataset-level fixed structure: W, temporal profiles, A_m per modality."""
    rng = seeding.rng_for(seed, seeding.STREAM_MIXING)
    c, l, t = cfg.n_channels, cfg.latent_dim, cfg.n_samples_raw

    if cfg.disjoint_modality_channels:
        lat_blocks = _blocks(l, len(MODALITIES))
        chan_blocks = _blocks(c, len(MODALITIES))
        w = np.zeros((c, l))
        for lb, cb in zip(lat_blocks, chan_blocks):
            w[np.ix_(cb, lb)] = rng.normal(size=(len(cb), len(lb))) / np.sqrt(len(lb))
    else:
        lat_blocks = None
        w = rng.normal(size=(c, l)) / np.sqrt(l)

    if cfg.signal_channels is not None:
        keep = np.zeros(c, dtype=bool)
        keep[np.asarray(cfg.signal_channels, dtype=int)] = True
        w = w * keep[:, None]

    onset = cfg.stimulus_onset
    span = t - onset
    ramp = max(2, t // 20)
    tt = np.arange(t)
    gate = np.zeros(t)
    rise = np.clip((tt - onset) / ramp, 0.0, 1.0)
    gate[tt >= onset] = 0.5 * (1.0 - np.cos(np.pi * rise[tt >= onset]))
    freqs = rng.uniform(1.0, 4.0, size=l)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=l)
    phase_arg = 2.0 * np.pi * freqs[:, None] * (tt[None, :] - onset) / span
    tau = gate[None, :] * np.sin(phase_arg + phases[:, None])
    rms = np.sqrt((tau[:, onset:] ** 2).mean(axis=1, keepdims=True))
    tau = tau / rms  # unit RMS over the post-onset span

    d = cfg.raw_target_dim
    mixers = {m: rng.normal(size=(d, d)) / np.sqrt(d) for m in MODALITIES}
    return w, tau, mixers, lat_blocks


def _latent(cfg: GenerationConfig, seed: int, image_index: int) -> np.ndarray:
    return seeding.rng_for(seed, seeding.STREAM_LATENT, image_index).standard_normal(cfg.latent_dim)


def _modality_target(cfg, seed, image_index, modality, mixers, lat_blocks) -> np.ndarray:
    s = _latent(cfg, seed, image_index)
    if lat_blocks is not None:
        keep = np.zeros_like(s)
        block = lat_blocks[seeding.modality_code(modality)]
        keep[block] = s[block]
        s = keep
    p = seeding.rng_for(
        seed, seeding.STREAM_PRIVATE, image_index, seeding.modality_code(modality)
    ).standard_normal(cfg.latent_dim)
    f = cfg.modality_private_frac
    mixed = mixers[modality] @ np.concatenate([np.sqrt(1.0 - f) * s, np.sqrt(f) * p])
    norm = np.linalg.norm(mixed)
    if norm == 0.0:
        raise DataError(f"degenerate zero modality target for image {image_index}")
    return mixed / norm


def clean_signal(cfg: GenerationConfig, seed: int, image_index: int) -> np.ndarray:
    """Noiseless EEG template W @ (s * tau) for one image."""
    w, tau, _, _ = _mixing(cfg, seed)
    s = _latent(cfg, seed, image_index)
    return w @ (s[:, None] * tau)


def generate_dataset(cfg: GenerationConfig, seed: int) -> SynthDataset:
    """Deterministic dataset: same (cfg, seed) gives bit-identical arrays."""
    w, tau, mixers, lat_blocks = _mixing(cfg, seed)
    c, t = cfg.n_channels, cfg.n_samples_raw
    noise_scale = 0.0 if np.isinf(cfg.snr) else 1.0 / np.sqrt(cfg.snr)

    def make_trials(concepts, images_per_concept, reps, image_base):
        signals, meta = [], []
        img_idx = image_base
        for ci in concepts:
            for _ in range(images_per_concept):
                s = _latent(cfg, seed, img_idx)
                template = w @ (s[:, None] * tau)
                for r in range(reps):
                    noise = seeding.rng_for(seed, seeding.STREAM_NOISE, img_idx, r).standard_normal((c, t))
                    signals.append(template + noise_scale * noise)
                    meta.append((ci, img_idx, r, 0))
                img_idx += 1
        return np.stack(signals), np.asarray(meta, dtype=np.int64)

    train_concepts = range(cfg.n_concepts_train)
    test_concepts = range(cfg.n_concepts_train, cfg.n_concepts_train + cfg.n_concepts_test)
    train_signals, train_meta = make_trials(train_concepts, cfg.n_images_per_concept, cfg.n_repetitions, 0)
    test_signals, test_meta = make_trials(test_concepts, 1, cfg.n_test_repetitions, cfg.n_train_images)

    targets = {
        m: np.stack([
            _modality_target(cfg, seed, i, m, mixers, lat_blocks)
            for i in range(cfg.n_images_total)
        ])
        for m in MODALITIES
    }

    ds = SynthDataset(cfg, seed, train_signals, train_meta, test_signals, test_meta, targets)
    _validate_counts(ds)
    return ds


def _validate_counts(ds: SynthDataset) -> None:
    cfg = ds.config
    n_train = cfg.n_concepts_train * cfg.n_images_per_concept * cfg.n_repetitions
    n_test = cfg.n_concepts_test * cfg.n_test_repetitions
    if ds.train_signals.shape != (n_train, cfg.n_channels, cfg.n_samples_raw):
        raise DataError(f"train signals shape {ds.train_signals.shape}, expected {(n_train, cfg.n_channels, cfg.n_samples_raw)}")
    if ds.test_signals.shape != (n_test, cfg.n_channels, cfg.n_samples_raw):
        raise DataError(f"test signals shape {ds.test_signals.shape}, expected {(n_test, cfg.n_channels, cfg.n_samples_raw)}")
    if ds.train_meta.shape != (n_train, 4) or ds.test_meta.shape != (n_test, 4):
        raise DataError("metadata shape mismatch")
    train_concepts = set(ds.train_meta[:, 0].tolist())
    test_concepts = set(ds.test_meta[:, 0].tolist())
    if train_concepts & test_concepts:
        raise DataError("train and test concepts overlap; the split must be zero-shot")
    for m in MODALITIES:
        if m not in ds.modality_targets:
            raise DataError(f"missing modality targets for {m!r}")
        if ds.modality_targets[m].shape != (cfg.n_images_total, cfg.raw_target_dim):
            raise DataError(f"{m} targets shape {ds.modality_targets[m].shape}")


# -- persistence ------------------------------------------------------------

DATASET_KIND = "dataset"


def save_dataset(ds: SynthDataset, directory: str | Path) -> None:
    tensors = {
        "train_signals": ds.train_signals,
        "train_meta": ds.train_meta,
        "test_signals": ds.test_signals,
        "test_meta": ds.test_meta,
    }
    for m in MODALITIES:
        tensors[f"targets_{m}"] = ds.modality_targets[m]
    config = {"generation": ds.config.to_dict(), "seed": ds.seed}
    ser.save_checkpoint(directory, DATASET_KIND, config, tensors)


def load_dataset(directory: str | Path) -> SynthDataset:
    config, tensors, _, _ = ser.load_checkpoint(directory, expected_kind=DATASET_KIND)
    gen = GenerationConfig(**config["generation"])
    ds = SynthDataset(
        gen,
        int(config["seed"]),
        tensors["train_signals"],
        tensors["train_meta"],
        tensors["test_signals"],
        tensors["test_meta"],
        {m: tensors[f"targets_{m}"] for m in MODALITIES},
    )
    _validate_counts(ds)
    return ds


# -- preprocessing ----------------------------------------------------------


@dataclass
class PreprocessConfig:
    baseline_samples: int | None = None  # default: one fifth of the raw length
    downsample_factor: int = 4
    shrinkage: float = 0.1

    def resolved_baseline(self, n_samples_raw: int) -> int:
        return self.baseline_samples if self.baseline_samples is not None else n_samples_raw // 5

    def to_dict(self) -> dict:
        return asdict(self)


def baseline_correct(signals: np.ndarray, baseline_samples: int) -> np.ndarray:
    """Subtract each channel's pre-stimulus mean; keep the post-stimulus part."""
    signals = np.asarray(signals, dtype=np.float64)
    t = signals.shape[-1]
    if not (0 < baseline_samples < t):
        raise DataError(f"baseline_samples {baseline_samples} outside (0, {t})")
    base = signals[..., :baseline_samples].mean(axis=-1, keepdims=True)
    return signals[..., baseline_samples:] - base


def downsample(signals: np.ndarray, factor: int) -> np.ndarray:
    """Block-average over non-overlapping windows of `factor` samples."""
    signals = np.asarray(signals, dtype=np.float64)
    t = signals.shape[-1]
    factor = int(factor)
    if factor < 1:
        raise DataError(f"downsample factor must be >= 1, got {factor}")
    if t % factor != 0:
        raise DataError(f"length {t} not divisible by downsample factor {factor}")
    return signals.reshape(*signals.shape[:-1], t // factor, factor).mean(axis=-1)


def whitening_matrix(signals: np.ndarray, shrinkage: float = 0.1) -> np.ndarray:
    """Inverse symmetric square root of the shrunk pooled channel covariance.

    Covariance pools every time sample of every trial. Shrinkage blends
    toward the diagonal: (1-lambda)*Sigma + lambda*diag(Sigma).
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim != 3:
        raise DataError(f"whitening_matrix expects (trials, channels, time), got {signals.shape}")
    if not (0.0 <= shrinkage <= 1.0):
        raise DataError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    n, c, t = signals.shape
    flat = signals.transpose(1, 0, 2).reshape(c, n * t)
    flat = flat - flat.mean(axis=1, keepdims=True)
    cov = flat @ flat.T / max(n * t - 1, 1)
    cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= 1e-12:
        raise DataError(f"singular channel covariance (min eigenvalue {evals.min():.3e})")
    return evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T


def whiten(signals: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    signals = np.asarray(signals, dtype=np.float64)
    c = signals.shape[-2]
    if matrix.shape != (c, c):
        raise DataError(f"whitening matrix {matrix.shape} vs {c} channels")
    return np.einsum("dc,...ct->...dt", matrix, signals)


def average_repetitions(signals: np.ndarray, image_indices: np.ndarray):
    """Mean signal per image. Returns (averages, sorted unique image indices)."""
    signals = np.asarray(signals, dtype=np.float64)
    image_indices = np.asarray(image_indices)
    if signals.shape[0] != image_indices.shape[0]:
        raise DataError(f"{signals.shape[0]} trials vs {image_indices.shape[0]} indices")
    unique = np.unique(image_indices)
    out = np.stack([signals[image_indices == u].mean(axis=0) for u in unique])
    return out, unique


@dataclass
class Preprocessed:
    """Outputs of the fixed chain, per-trial and repetition-averaged."""

    x_train: np.ndarray            # (N_train, C, T)
    train_image_indices: np.ndarray
    x_test: np.ndarray             # (N_test, C, T), whitened per trial
    test_trial_image_indices: np.ndarray
    x_test_avg: np.ndarray         # (K_test, C, T)
    test_image_indices: np.ndarray
    whitener: np.ndarray           # (C, C) fitted on train
    n_samples: int


def preprocess(ds: SynthDataset, cfg: PreprocessConfig | None = None) -> Preprocessed:
    cfg = cfg or PreprocessConfig()
    baseline = cfg.resolved_baseline(ds.config.n_samples_raw)
    post = ds.config.n_samples_raw - baseline
    if post % cfg.downsample_factor != 0:
        raise DataError(
            f"post-stimulus length {post} not divisible by downsample factor {cfg.downsample_factor}"
        )

    def stage(signals):
        return downsample(baseline_correct(signals, baseline), cfg.downsample_factor)

    train = stage(ds.train_signals)
    matrix = whitening_matrix(train, cfg.shrinkage)
    train = whiten(train, matrix)
    test = whiten(stage(ds.test_signals), matrix)
    test_avg, test_images = average_repetitions(test, ds.test_image_indices)
    return Preprocessed(
        x_train=train,
        train_image_indices=ds.train_image_indices.copy(),
        x_test=test,
        test_trial_image_indices=ds.test_image_indices.copy(),
        x_test_avg=test_avg,
        test_image_indices=test_images,
        whitener=matrix,
        n_samples=train.shape[-1],
    )
