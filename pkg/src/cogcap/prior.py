"""Conditional denoising diffusion prior over modality embeddings.

The network regresses the clean embedding directly (x0-prediction): given a
noised target, a timestep embedding, and the EEG condition, it predicts the
unnoised modality embedding under mean-squared error. During training 10% of
conditions are replaced with fresh standard-normal draws; at inference a
fixed seeded null-condition vector drives the unconditional branch of
classifier-free guidance, combined as uncond + g * (cond - uncond), and the
reverse process is a deterministic DDIM loop over evenly spaced timesteps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .encoder import sinusoidal_table
from .optim import AdamW
from .seeding import STREAM_PRIOR_INIT, STREAM_PRIOR_TRAIN, STREAM_SAMPLER, rng_for
from .serialization import save_checkpoint, load_checkpoint


@dataclass
class NoiseSchedule:
    t_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def make_schedule(t_steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with precomputed cumulative products."""
    if t_steps < 1:
        raise ValueError(f"t_steps must be >= 1, got {t_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, t_steps)
    alpha = 1.0 - beta
    return NoiseSchedule(t_steps, beta, alpha, np.cumprod(alpha))


def q_sample(m0: np.ndarray, t: np.ndarray, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(abar_t) * m0 + sqrt(1 - abar_t) * noise."""
    m0 = np.asarray(m0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    t = np.asarray(t)
    if m0.shape != noise.shape or t.shape != (m0.shape[0],):
        raise ad.ShapeError(f"q_sample: m0 {m0.shape}, noise {noise.shape}, t {t.shape}")
    if t.min() < 0 or t.max() >= schedule.t_steps:
        raise ValueError(f"timestep outside [0, {schedule.t_steps}): {t.min()}..{t.max()}")
    abar = schedule.alpha_bar[t][:, None]
    return np.sqrt(abar) * m0 + np.sqrt(1.0 - abar) * noise


@dataclass
class PriorConfig:
    """Architecture and training hyperparameters (desk-scale defaults)."""

    embed_dim: int = 64
    n_blocks: int = 3
    hidden_mult: int = 4
    t_steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 200
    cond_drop: float = 0.1

    @property
    def hidden(self) -> int:
        return self.hidden_mult * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)


def prior_init(cfg: PriorConfig, seed: int, *extra_keys: int) -> dict[str, ad.Tensor]:
    """Residual MLP weights plus the fixed null-condition vector."""
    rng = rng_for(seed, STREAM_PRIOR_INIT, *extra_keys)
    d, h = cfg.embed_dim, cfg.hidden

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(shape, trainable=True):
        return ad.Tensor(np.zeros(shape), requires_grad=trainable)

    params: dict[str, ad.Tensor] = {
        "w_in": uniform((3 * d, h), 3 * d), "b_in": zeros(h),
        "w_out": uniform((h, d), h), "b_out": zeros(d),
        "ln_out_gamma": ad.Tensor(np.ones(h), requires_grad=True),
        "ln_out_beta": zeros(h),
    }
    for i in range(cfg.n_blocks):
        params[f"blk{i}_ln_gamma"] = ad.Tensor(np.ones(h), requires_grad=True)
        params[f"blk{i}_ln_beta"] = zeros(h)
        params[f"blk{i}_w1"] = uniform((h, h), h)
        params[f"blk{i}_b1"] = zeros(h)
        params[f"blk{i}_w2"] = uniform((h, h), h)
        params[f"blk{i}_b2"] = zeros(h)
    # constants: timestep table and the fixed null condition for guidance
    params["time_table"] = ad.Tensor(sinusoidal_table(cfg.t_steps, d))
    params["null_cond"] = ad.Tensor(rng.standard_normal(d))
    return params


def prior_trainable(params: dict[str, ad.Tensor]) -> list[ad.Tensor]:
    return [p for p in params.values() if p.requires_grad]


def prior_forward(cfg: PriorConfig, params: dict[str, ad.Tensor], m_t, t: np.ndarray, cond) -> ad.Tensor:
    """Predict the clean embedding from (noisy target, timestep, condition)."""
    if not isinstance(m_t, ad.Tensor):
        m_t = ad.Tensor(np.asarray(m_t, dtype=np.float64))
    if not isinstance(cond, ad.Tensor):
        cond = ad.Tensor(np.asarray(cond, dtype=np.float64))
    n, d = m_t.shape
    t = np.asarray(t)
    if d != cfg.embed_dim or cond.shape != (n, d) or t.shape != (n,):
        raise ad.ShapeError(f"prior_forward: m_t {m_t.shape}, cond {cond.shape}, t {t.shape}")
    if t.min() < 0 or t.max() >= cfg.t_steps:
        raise ValueError(f"timestep outside [0, {cfg.t_steps})")

    temb = ad.Tensor(params["time_table"].data[t])
    h = ad.matmul(ad.concat([m_t, temb, cond], axis=1), params["w_in"]) + params["b_in"]
    for i in range(cfg.n_blocks):
        u = ad.layer_norm(h, params[f"blk{i}_ln_gamma"], params[f"blk{i}_ln_beta"])
        u = ad.gelu(ad.matmul(u, params[f"blk{i}_w1"]) + params[f"blk{i}_b1"])
        u = ad.matmul(u, params[f"blk{i}_w2"]) + params[f"blk{i}_b2"]
        h = h + u
    h = ad.layer_norm(h, params["ln_out_gamma"], params["ln_out_beta"])
    return ad.matmul(h, params["w_out"]) + params["b_out"]


def dropout_mask(rng: np.random.Generator, n: int, rate: float = 0.1) -> np.ndarray:
    """Boolean mask of conditions to replace with fresh noise."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return rng.uniform(size=n) < rate


def prior_train(
    cond: np.ndarray,
    target: np.ndarray,
    schedule: NoiseSchedule,
    cfg: PriorConfig,
    seed: int,
    *extra_keys: int,
) -> tuple[dict[str, ad.Tensor], list[float], bool]:
    """Train by x0-prediction MSE with 10% condition replacement.

    Per batch the draw order is fixed (timesteps, noise, dropout mask, fresh
    conditions), so loss curves are reproducible per seed. Returns (params,
    per-epoch mean losses, aborted flag).
    """
    cond = np.asarray(cond, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if cond.ndim != 2 or cond.shape != target.shape:
        raise ad.ShapeError(f"cond {cond.shape} vs target {target.shape}")
    if cond.shape[1] != cfg.embed_dim:
        raise ad.ShapeError(f"embeddings dim {cond.shape[1]} vs configured {cfg.embed_dim}")
    if schedule.t_steps != cfg.t_steps:
        raise ValueError(f"schedule has {schedule.t_steps} steps, config says {cfg.t_steps}")

    n, d = cond.shape
    params = prior_init(cfg, seed, *extra_keys)
    opt = AdamW(prior_trainable(params), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = rng_for(seed, STREAM_PRIOR_TRAIN, *extra_keys)
    losses: list[float] = []
    aborted = False
    good = {k: t.data.copy() for k, t in params.items()}

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        try:
            for start in range(0, n, cfg.batch_size):
                take = perm[start:start + cfg.batch_size]
                b = take.size
                t_draw = rng.integers(0, cfg.t_steps, size=b)
                noise = rng.standard_normal((b, d))
                drop = dropout_mask(rng, b, cfg.cond_drop)
                fresh = rng.standard_normal((b, d))
                cond_b = np.where(drop[:, None], fresh, cond[take])
                m_t = q_sample(target[take], t_draw, noise, schedule)
                pred = prior_forward(cfg, params, m_t, t_draw, cond_b)
                loss = ad.tmean((pred - ad.Tensor(target[take])) ** 2.0)
                opt.zero_grad()
                loss.backward()
                opt.step()
                batch_losses.append(loss.item())
        except ad.NumericalError:
            for k, t in params.items():
                t.data = good[k].copy()
            aborted = True
            break
        good = {k: t.data.copy() for k, t in params.items()}
        losses.append(float(np.mean(batch_losses)))
    return params, losses, aborted


# -- sampling ---------------------------------------------------------------


def _ddim_grid(t_steps: int, n_steps: int) -> np.ndarray:
    if not (1 <= n_steps <= t_steps):
        raise ValueError(f"n_steps {n_steps} outside [1, {t_steps}]")
    return np.unique(np.linspace(0, t_steps - 1, n_steps).round().astype(int))


def _ddim_loop(predict, x: np.ndarray, schedule: NoiseSchedule, grid: np.ndarray, collect=None) -> np.ndarray:
    x0 = x
    for i in range(len(grid) - 1, -1, -1):
        t = int(grid[i])
        x0 = predict(x, t)
        if collect is not None:
            collect.append(x0.copy())
        if i > 0:
            abar_t = schedule.alpha_bar[t]
            abar_prev = schedule.alpha_bar[int(grid[i - 1])]
            eps = (x - np.sqrt(abar_t) * x0) / np.sqrt(1.0 - abar_t)
            x = np.sqrt(abar_prev) * x0 + np.sqrt(1.0 - abar_prev) * eps
    return x0


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ad.NumericalError("sampler produced a zero embedding")
    return x / norms


def prior_sample(
    cfg: PriorConfig,
    params: dict[str, ad.Tensor],
    e: np.ndarray,
    schedule: NoiseSchedule,
    n_steps: int = 50,
    guidance_scale: float = 7.5,
    seed: int = 0,
    collect: list | None = None,
) -> np.ndarray:
    """Deterministic DDIM reverse loop with classifier-free guidance.

    Each step evaluates the network on the true condition and on the fixed
    null condition, combines the two x0 estimates, and steps the state; the
    final x0 estimate is L2-normalized.
    """
    if guidance_scale < 0:
        raise ValueError(f"guidance_scale must be >= 0, got {guidance_scale}")
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != cfg.embed_dim:
        raise ad.ShapeError(f"conditions {e.shape} vs embed dim {cfg.embed_dim}")
    grid = _ddim_grid(schedule.t_steps, n_steps)
    n = e.shape[0]
    null = np.broadcast_to(params["null_cond"].data, e.shape)
    x = rng_for(seed, STREAM_SAMPLER).standard_normal((n, cfg.embed_dim))

    def predict(xt, t):
        tt = np.full(n, t)
        cond_x0 = prior_forward(cfg, params, xt, tt, e).data
        uncond_x0 = prior_forward(cfg, params, xt, tt, null).data
        return uncond_x0 + guidance_scale * (cond_x0 - uncond_x0)

    return _normalize_rows(_ddim_loop(predict, x, schedule, grid, collect))


def prior_sample_conditional(
    cfg: PriorConfig,
    params: dict[str, ad.Tensor],
    e: np.ndarray,
    schedule: NoiseSchedule,
    n_steps: int = 50,
    seed: int = 0,
    collect: list | None = None,
) -> np.ndarray:
    """Reference pathway that never evaluates the null condition."""
    e = np.asarray(e, dtype=np.float64)
    grid = _ddim_grid(schedule.t_steps, n_steps)
    n = e.shape[0]
    x = rng_for(seed, STREAM_SAMPLER).standard_normal((n, cfg.embed_dim))

    def predict(xt, t):
        return prior_forward(cfg, params, xt, np.full(n, t), e).data

    return _normalize_rows(_ddim_loop(predict, x, schedule, grid, collect))


# -- estimator and persistence ----------------------------------------------

PRIOR_KIND = "prior"


class EmbeddingPrior(BaseEstimator, TransformerMixin):
    """Diffusion prior as a transformer: fit(conditions, targets), then
    transform(conditions) samples embeddings in the target space."""

    def __init__(self, modality: str = "image", embed_dim: int = 64, n_blocks: int = 3,
                 hidden_mult: int = 4, t_steps: int = 100, beta_min: float = 1e-4,
                 beta_max: float = 0.02, lr: float = 3e-4, weight_decay: float = 0.01,
                 batch_size: int = 128, epochs: int = 200, cond_drop: float = 0.1,
                 n_steps: int = 50, guidance_scale: float = 7.5, seed: int = 0):
        self.modality = modality
        self.embed_dim = embed_dim
        self.n_blocks = n_blocks
        self.hidden_mult = hidden_mult
        self.t_steps = t_steps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.cond_drop = cond_drop
        self.n_steps = n_steps
        self.guidance_scale = guidance_scale
        self.seed = seed

    def _config(self) -> PriorConfig:
        return PriorConfig(
            embed_dim=self.embed_dim, n_blocks=self.n_blocks, hidden_mult=self.hidden_mult,
            t_steps=self.t_steps, beta_min=self.beta_min, beta_max=self.beta_max,
            lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
            epochs=self.epochs, cond_drop=self.cond_drop,
        )

    def fit(self, X, y):
        from .seeding import MODALITY_CODES

        cfg = self._config()
        self.schedule_ = make_schedule(cfg.t_steps, cfg.beta_min, cfg.beta_max)
        code = MODALITY_CODES[self.modality]
        self.params_, self.losses_, self.aborted_ = prior_train(
            X, y, self.schedule_, cfg, self.seed, code)
        return self

    def transform(self, X, n_steps=None, guidance_scale=None, seed=None):
        return prior_sample(
            self._config(), self.params_, X, self.schedule_,
            n_steps=self.n_steps if n_steps is None else n_steps,
            guidance_scale=self.guidance_scale if guidance_scale is None else guidance_scale,
            seed=self.seed if seed is None else seed,
        )


def save_prior(directory: str | Path, prior: EmbeddingPrior) -> None:
    config = {"params": prior.get_params(), "aborted": prior.aborted_}
    tensors = {k: np.asarray(t.data) for k, t in prior.params_.items()}
    save_checkpoint(directory, PRIOR_KIND, config, tensors,
                    step=len(prior.losses_), extra={"losses": prior.losses_})


def load_prior(directory: str | Path) -> EmbeddingPrior:
    config, tensors, _, extra = load_checkpoint(directory, expected_kind=PRIOR_KIND)
    prior = EmbeddingPrior(**config["params"])
    cfg = prior._config()
    prior.schedule_ = make_schedule(cfg.t_steps, cfg.beta_min, cfg.beta_max)
    prior.params_ = prior_init(cfg, prior.seed)
    for k, t in prior.params_.items():
        t.data = tensors[k].copy()
    prior.losses_ = [float(v) for v in extra.get("losses", [])]
    prior.aborted_ = bool(config["aborted"])
    return prior
