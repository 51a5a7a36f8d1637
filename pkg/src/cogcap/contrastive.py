"""Multi-positive symmetric InfoNCE alignment between EEG experts and
modality embeddings.

Positives are defined by shared image index, so every repetition of the same
stimulus counts toward the positive sum of its partners. The denominator
includes the positives. One expert trains per modality, each against its own
frozen embedder plus trainable projection, with a learnable temperature.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from . import encoder as enc
from . import metrics
from .embedders import FrozenEmbedder, ResidualProjection, embed_modality, embedder_init
from .optim import AdamW
from .seeding import MODALITY_CODES, STREAM_SHUFFLE, rng_for
from .serialization import save_checkpoint, load_checkpoint
from .synth import MODALITIES, Preprocessed


@dataclass
class ContrastiveBatch:
    """Paired unit-norm embeddings plus the image indices that define
    positives."""

    q: ad.Tensor
    k: ad.Tensor
    image_indices: np.ndarray

    def __post_init__(self):
        if not isinstance(self.q, ad.Tensor):
            self.q = ad.Tensor(np.asarray(self.q, dtype=np.float64))
        if not isinstance(self.k, ad.Tensor):
            self.k = ad.Tensor(np.asarray(self.k, dtype=np.float64))
        self.image_indices = np.asarray(self.image_indices)
        n = self.q.shape[0] if self.q.ndim == 2 else 0
        if self.q.ndim != 2 or self.q.shape != self.k.shape or n < 2:
            raise ad.ShapeError(f"batch needs matching (N>=2, D) pairs, got {self.q.shape} vs {self.k.shape}")
        if self.image_indices.shape != (n,):
            raise ad.ShapeError(f"{n} pairs vs indices {self.image_indices.shape}")
        for name, t in (("q", self.q), ("k", self.k)):
            norms = np.linalg.norm(t.data, axis=1)
            worst = np.abs(norms - 1.0).max()
            if worst > 1e-9:
                raise ValueError(f"{name} rows must be unit norm, off by {worst:.2e}")


def positive_mask(image_indices: np.ndarray) -> np.ndarray:
    """(N, N) boolean; true where two trials share an image index."""
    idx = np.asarray(image_indices)
    if idx.ndim != 1:
        raise ad.ShapeError(f"image_indices must be 1-d, got {idx.shape}")
    return idx[:, None] == idx[None, :]


def _as_tau(tau) -> ad.Tensor:
    t = tau if isinstance(tau, ad.Tensor) else ad.Tensor(float(tau))
    value = float(np.min(t.data))
    if value <= 0.0:
        raise ValueError(f"temperature must be positive, got {value}")
    return t


def info_nce(batch: ContrastiveBatch, tau, mask: np.ndarray | None = None, per_anchor: bool = False) -> ad.Tensor:
    """Multi-positive InfoNCE with keys as anchors.

    Per anchor k_i the positive sum runs over all queries sharing its image
    index (the anchor's own pair included), the denominator over every
    query. Returns the mean over anchors, or the (N,) per-anchor vector.
    """
    tau_t = _as_tau(tau)
    if mask is None:
        mask = positive_mask(batch.image_indices)
    mask = np.asarray(mask, dtype=np.float64)
    n = batch.image_indices.shape[0]
    if mask.shape != (n, n):
        raise ad.ShapeError(f"mask {mask.shape} vs batch size {n}")
    if np.any(mask.sum(axis=0) == 0):
        raise ValueError("every anchor needs at least one positive")

    sims = ad.matmul(batch.q, ad.transpose(batch.k, (1, 0)))  # sims[query, anchor]
    e = ad.exp(sims / tau_t)
    pos = ad.tsum(e * ad.Tensor(mask), axis=0)
    tot = ad.tsum(e, axis=0)
    losses = ad.log(tot) - ad.log(pos)
    return losses if per_anchor else ad.tmean(losses)


def symmetric_loss(batch: ContrastiveBatch, tau) -> ad.Tensor:
    """Sum of both anchoring directions; equal terms when the logit matrix is
    symmetric."""
    flipped = ContrastiveBatch(batch.k, batch.q, batch.image_indices)
    return info_nce(batch, tau) + info_nce(flipped, tau)


class TemperatureParam:
    """Learnable log-inverse-temperature; effective tau = exp(-log_inv_temp),
    with exp(log_inv_temp) clamped to <= 100 in the forward pass."""

    def __init__(self, tau_init: float = 0.07):
        if tau_init <= 0:
            raise ValueError(f"tau_init must be positive, got {tau_init}")
        self.log_inv_temp = ad.Tensor(math.log(1.0 / tau_init), requires_grad=True)

    def tau_tensor(self) -> ad.Tensor:
        return ad.power(ad.clamp_max(ad.exp(self.log_inv_temp), 100.0), -1.0)

    @property
    def tau(self) -> float:
        return float(self.tau_tensor().data)


# -- training ---------------------------------------------------------------


@dataclass
class AlignConfig:
    """Hyperparameters of one alignment run (desk-scale defaults)."""

    embed_dim: int = 64
    temporal_kernel: int = 25
    conv_channels: int = 40
    pool_kernel: int = 6
    pool_stride: int = 2
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 30
    tau_init: float = 0.07

    def to_dict(self) -> dict:
        return asdict(self)


class ContrastiveAligner(BaseEstimator, TransformerMixin):
    """One EEG expert aligned to one modality's embedding space.

    fit(X, y, image_indices) expects per-trial EEG (N, C, T), per-trial raw
    targets (N, D_raw), and the image index of each trial. transform maps EEG
    to unit-norm embeddings; embed_targets maps raw targets through the
    frozen embedder and trained projection.
    """

    def __init__(self, modality: str = "image", embed_dim: int = 64,
                 temporal_kernel: int = 25, conv_channels: int = 40,
                 pool_kernel: int = 6, pool_stride: int = 2,
                 lr: float = 3e-4, weight_decay: float = 0.01,
                 batch_size: int = 128, epochs: int = 30,
                 tau_init: float = 0.07, seed: int = 0):
        self.modality = modality
        self.embed_dim = embed_dim
        self.temporal_kernel = temporal_kernel
        self.conv_channels = conv_channels
        self.pool_kernel = pool_kernel
        self.pool_stride = pool_stride
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau_init = tau_init
        self.seed = seed

    # -- internals --

    def _snapshot(self) -> dict[str, np.ndarray]:
        state = {f"enc.{k}": t.data.copy() for k, t in self.params_.items()}
        state["proj.weight"] = self.projection_.weight.data.copy()
        state["proj.bias"] = self.projection_.bias.data.copy()
        state["proj.gamma"] = self.projection_.gamma.data.copy()
        state["proj.beta"] = self.projection_.beta.data.copy()
        state["log_inv_temp"] = np.asarray(self.temperature_.log_inv_temp.data).copy()
        return state

    def _restore(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params_.items():
            t.data = state[f"enc.{k}"].copy()
        self.projection_.weight.data = state["proj.weight"].copy()
        self.projection_.bias.data = state["proj.bias"].copy()
        self.projection_.gamma.data = state["proj.gamma"].copy()
        self.projection_.beta.data = state["proj.beta"].copy()
        self.temperature_.log_inv_temp.data = state["log_inv_temp"].copy()

    def _trainable(self) -> list[ad.Tensor]:
        return (enc.trainable(self.params_) + self.projection_.params()
                + [self.temperature_.log_inv_temp])

    # -- estimator API --

    def fit(self, X, y, image_indices=None, eval_set=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 3 or y.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ad.ShapeError(f"X {X.shape} vs y {y.shape}")
        if image_indices is None:
            raise ValueError("image_indices are required to define positives")
        image_indices = np.asarray(image_indices)
        if image_indices.shape != (X.shape[0],):
            raise ad.ShapeError(f"image_indices {image_indices.shape} vs {X.shape[0]} trials")

        n, c, t = X.shape
        code = MODALITY_CODES[self.modality]
        self.encoder_config_ = enc.EncoderConfig(
            n_channels=c, n_samples=t, temporal_kernel=self.temporal_kernel,
            conv_channels=self.conv_channels, pool_kernel=self.pool_kernel,
            pool_stride=self.pool_stride, embed_dim=self.embed_dim,
        )
        self.params_ = enc.init_params(self.encoder_config_, self.seed, code)
        self.frozen_, self.projection_ = embedder_init(self.modality, self.seed, y.shape[1], self.embed_dim)
        self.temperature_ = TemperatureParam(self.tau_init)
        self.log_ = []
        self.aborted_ = False

        opt = AdamW(self._trainable(), lr=self.lr, weight_decay=self.weight_decay)
        good = self._snapshot()
        for epoch in range(self.epochs):
            perm = rng_for(self.seed, STREAM_SHUFFLE, code, epoch).permutation(n)
            batch_losses = []
            try:
                for start in range(0, n, self.batch_size):
                    take = perm[start:start + self.batch_size]
                    if take.size < 2:
                        continue  # a single pair cannot form a contrast
                    q = ad.l2_normalize(enc.forward(self.encoder_config_, self.params_, X[take], train=True))
                    k = embed_modality(self.frozen_, self.projection_, y[take])
                    loss = symmetric_loss(ContrastiveBatch(q, k, image_indices[take]),
                                          self.temperature_.tau_tensor())
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    batch_losses.append(loss.item())
            except ad.NumericalError:
                self._restore(good)
                self.aborted_ = True
                break
            good = self._snapshot()
            record = {"epoch": epoch, "modality": self.modality,
                      "loss": float(np.mean(batch_losses)),
                      "test_top1": None, "test_top5": None,
                      "tau": self.temperature_.tau}
            if eval_set is not None:
                x_eval, y_eval = eval_set
                queries = self.transform(x_eval)
                candidates = self.embed_targets(y_eval)
                truth = np.arange(len(queries))
                record["test_top1"] = metrics.nway_topk(queries, candidates, truth, 1)
                record["test_top5"] = metrics.nway_topk(queries, candidates, truth, min(5, len(candidates)))
            self.log_.append(record)
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = enc.forward(self.encoder_config_, self.params_, X, train=False)
        return ad.l2_normalize(out).data

    def embed_targets(self, y) -> np.ndarray:
        return embed_modality(self.frozen_, self.projection_, np.asarray(y, dtype=np.float64)).data


ALIGNER_KIND = "alignment"


def save_aligner(directory: str | Path, aligner: ContrastiveAligner,
                 extra_tensors: dict[str, np.ndarray] | None = None,
                 extra: dict | None = None) -> None:
    config = {
        "params": aligner.get_params(),
        "n_channels": aligner.encoder_config_.n_channels,
        "n_samples": aligner.encoder_config_.n_samples,
        "d_raw": aligner.frozen_.d_raw,
        "aborted": aligner.aborted_,
    }
    tensors = dict(aligner._snapshot())
    tensors["frozen.w1"] = aligner.frozen_.w1
    tensors["frozen.b1"] = aligner.frozen_.b1
    tensors["frozen.w2"] = aligner.frozen_.w2
    tensors["frozen.b2"] = aligner.frozen_.b2
    if extra_tensors:
        tensors.update(extra_tensors)
    save_checkpoint(directory, ALIGNER_KIND, config,
                    tensors, step=len(aligner.log_), extra={"log": aligner.log_, **(extra or {})})


def load_aligner(directory: str | Path) -> tuple[ContrastiveAligner, dict[str, np.ndarray], dict]:
    """Rebuild a fitted aligner. Returns (aligner, all tensors, extra)."""
    config, tensors, _, extra = load_checkpoint(directory, expected_kind=ALIGNER_KIND)
    aligner = ContrastiveAligner(**config["params"])
    aligner.encoder_config_ = enc.EncoderConfig(
        n_channels=int(config["n_channels"]), n_samples=int(config["n_samples"]),
        temporal_kernel=aligner.temporal_kernel, conv_channels=aligner.conv_channels,
        pool_kernel=aligner.pool_kernel, pool_stride=aligner.pool_stride,
        embed_dim=aligner.embed_dim,
    )
    aligner.params_ = enc.init_params(aligner.encoder_config_, aligner.seed,
                                      MODALITY_CODES[aligner.modality])
    aligner.frozen_, aligner.projection_ = embedder_init(
        aligner.modality, aligner.seed, int(config["d_raw"]), aligner.embed_dim)
    aligner.temperature_ = TemperatureParam(aligner.tau_init)
    aligner._restore({k: v for k, v in tensors.items()
                      if k.startswith(("enc.", "proj.")) or k == "log_inv_temp"})
    aligner.frozen_.w1 = tensors["frozen.w1"]
    aligner.frozen_.b1 = tensors["frozen.b1"]
    aligner.frozen_.w2 = tensors["frozen.w2"]
    aligner.frozen_.b2 = tensors["frozen.b2"]
    aligner.log_ = list(extra.get("log", []))
    aligner.aborted_ = bool(config["aborted"])
    return aligner, tensors, extra


def train_alignment(
    pp: Preprocessed,
    targets: dict[str, np.ndarray],
    cfg: AlignConfig,
    seed: int,
    modalities: tuple[str, ...] = MODALITIES,
    n_threads: int = 1,
    log_path: str | Path | None = None,
) -> tuple[dict[str, ContrastiveAligner], list[dict]]:
    """Train one expert per modality against the preprocessed dataset.

    The per-modality loops share nothing but the read-only dataset, so they
    may run on a thread pool. Logs are merged in canonical modality order
    either way, and optionally written as JSON lines.
    """
    for m in modalities:
        if m not in targets:
            raise ValueError(f"missing targets for modality {m!r}")

    def build(modality: str) -> ContrastiveAligner:
        aligner = ContrastiveAligner(
            modality=modality, embed_dim=cfg.embed_dim,
            temporal_kernel=cfg.temporal_kernel, conv_channels=cfg.conv_channels,
            pool_kernel=cfg.pool_kernel, pool_stride=cfg.pool_stride,
            lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
            epochs=cfg.epochs, tau_init=cfg.tau_init, seed=seed,
        )
        table = np.asarray(targets[modality], dtype=np.float64)
        eval_set = (pp.x_test_avg, table[pp.test_image_indices])
        return aligner.fit(pp.x_train, table[pp.train_image_indices],
                           image_indices=pp.train_image_indices, eval_set=eval_set)

    if n_threads > 1 and len(modalities) > 1:
        with ThreadPoolExecutor(max_workers=min(n_threads, len(modalities))) as pool:
            fitted = dict(zip(modalities, pool.map(build, modalities)))
    else:
        fitted = {m: build(m) for m in modalities}

    log = [record for m in modalities for record in fitted[m].log_]
    if log_path is not None:
        with open(log_path, "w") as fh:
            for record in log:
                fh.write(json.dumps(record) + "\n")
    return fitted, log
