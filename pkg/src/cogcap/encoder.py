"""EEG modality-expert encoder.

Stage layout for one batch (N, C, T):
  1. add a sinusoidal positional table over the time axis (rows indexed by
     channel; permuting channels together with table rows permutes the
     attention-stage activations consistently, but the spatial conv ties its
     weights to channel positions, so this is not a full-model symmetry)
  2. single-head scaled dot-product self-attention over channel rows, plus
     a residual connection
  3. a shape-preserving linear map acting per channel over time (one (T,T)
     weight shared by all channels)
  4. TSConv: temporal conv (conv_channels kernels of width temporal_kernel),
     spatial conv collapsing the channel axis, temporal max-pooling,
     batch norm, ELU
  5. flatten to (N, pooled*conv_channels), project to embed_dim, add a
     GELU-linear residual branch, layer-norm

The output is not L2-normalized; callers normalize where cosine geometry is
needed.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from cogcap import autodiff as ad
from cogcap import seeding
from cogcap.autodiff import Tensor


@dataclass
class EncoderConfig:
    n_channels: int
    n_samples: int
    temporal_kernel: int = 25
    conv_channels: int = 40
    pool_kernel: int = 6
    pool_stride: int = 2
    embed_dim: int = 64

    def __post_init__(self):
        if self.n_channels < 1 or self.n_samples < 1:
            raise ad.ShapeError(f"bad encoder geometry: C={self.n_channels}, T={self.n_samples}")
        if not (1 <= self.temporal_kernel <= self.n_samples):
            raise ad.ShapeError(
                f"temporal kernel {self.temporal_kernel} does not fit {self.n_samples} samples"
            )
        if self.conv_channels < 1 or self.embed_dim < 1:
            raise ad.ShapeError("conv_channels and embed_dim must be >= 1")
        if self.pool_kernel < 1 or self.pool_stride < 1:
            raise ad.ShapeError(f"bad pooling: kernel {self.pool_kernel}, stride {self.pool_stride}")
        if self.pool_kernel > self.conv_length:
            raise ad.ShapeError(
                f"pool kernel {self.pool_kernel} exceeds conv output length {self.conv_length}"
            )

    @property
    def conv_length(self) -> int:
        return self.n_samples - self.temporal_kernel + 1

    @property
    def pooled_length(self) -> int:
        return (self.conv_length - self.pool_kernel) // self.pool_stride + 1

    @property
    def flat_dim(self) -> int:
        return self.pooled_length * self.conv_channels

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(cfg: EncoderConfig) -> int:
    """Exact trainable parameter count; init_params asserts against this."""
    t, c, ch, d = cfg.n_samples, cfg.n_channels, cfg.conv_channels, cfg.embed_dim
    # no key bias: softmax ignores a per-row constant, so it would be a dead
    # parameter with an identically-zero gradient
    attn = 4 * t * t + 3 * t
    lin = t * t + t
    tconv = ch * cfg.temporal_kernel + ch
    sconv = ch * ch * c + ch
    bn = 2 * ch
    proj = cfg.flat_dim * d + d
    res = d * d + d
    ln = 2 * d
    return attn + lin + tconv + sconv + bn + proj + res + ln


def sinusoidal_table(n_positions: int, dim: int) -> np.ndarray:
    """Standard sin/cos position table, one row per position."""
    pos = np.arange(n_positions)[:, None]
    idx = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def init_params(cfg: EncoderConfig, seed: int, *extra_keys: int) -> dict[str, Tensor]:
    """Weights ~ U(+-1/sqrt(fan_in)), zero biases, unit norm scales.

    extra_keys distinguish sibling encoders under one master seed, e.g. one
    expert per modality.
    """
    rng = seeding.rng_for(seed, seeding.STREAM_ENCODER_INIT, *extra_keys)
    t, c, ch, d = cfg.n_samples, cfg.n_channels, cfg.conv_channels, cfg.embed_dim

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    params: dict[str, Tensor] = {
        "pos_table": Tensor(sinusoidal_table(c, t)),
        "attn_wq": uniform((t, t), t), "attn_bq": zeros(t),
        "attn_wk": uniform((t, t), t),
        "attn_wv": uniform((t, t), t), "attn_bv": zeros(t),
        "attn_wo": uniform((t, t), t), "attn_bo": zeros(t),
        "lin_w": uniform((t, t), t), "lin_b": zeros(t),
        "tconv_w": uniform((ch, 1, 1, cfg.temporal_kernel), cfg.temporal_kernel), "tconv_b": zeros(ch),
        "sconv_w": uniform((ch, ch, c, 1), ch * c), "sconv_b": zeros(ch),
        "bn_gamma": Tensor(np.ones(ch), requires_grad=True),
        "bn_beta": zeros(ch),
        "bn_mean": Tensor(np.zeros(ch)),
        "bn_var": Tensor(np.ones(ch)),
        "proj_w": uniform((cfg.flat_dim, d), cfg.flat_dim), "proj_b": zeros(d),
        "res_w": uniform((d, d), d), "res_b": zeros(d),
        "ln_gamma": Tensor(np.ones(d), requires_grad=True),
        "ln_beta": zeros(d),
    }
    n_trainable = sum(p.size for p in params.values() if p.requires_grad)
    assert n_trainable == parameter_count(cfg), (n_trainable, parameter_count(cfg))
    return params


def trainable(params: dict[str, Tensor]) -> list[Tensor]:
    return [p for p in params.values() if p.requires_grad]


def _rowwise_affine(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """(N,C,T) @ (T,T) [+ (T,)], weights shared across channels."""
    n, c, t = x.shape
    h = ad.matmul(x.reshape(n * c, t), w)
    if b is not None:
        h = h + b
    return h.reshape(n, c, t)


def forward(
    cfg: EncoderConfig,
    params: dict[str, Tensor],
    batch: np.ndarray | Tensor,
    train: bool = False,
    collect: dict | None = None,
) -> Tensor:
    """Encode (N, C, T) signals to (N, embed_dim).

    Train mode uses batch statistics and updates the running batch-norm
    arrays in place; eval mode is pure. Pass a dict as `collect` to receive
    intermediate activations ("tconv": pre-spatial conv map (N,ch,C,T'),
    "tsconv_map": pooled map (N, pooled, ch)).
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 3 or x.shape[1] != cfg.n_channels or x.shape[2] != cfg.n_samples:
        raise ad.ShapeError(
            f"encoder input {x.shape}, expected (N, {cfg.n_channels}, {cfg.n_samples})"
        )
    n = x.shape[0]

    h = x + params["pos_table"]
    q = _rowwise_affine(h, params["attn_wq"], params["attn_bq"])
    k = _rowwise_affine(h, params["attn_wk"], None)
    v = _rowwise_affine(h, params["attn_wv"], params["attn_bv"])
    attended = _rowwise_affine(ad.attention(q, k, v), params["attn_wo"], params["attn_bo"])
    h = h + attended
    h = _rowwise_affine(h, params["lin_w"], params["lin_b"])

    h = h.reshape(n, 1, cfg.n_channels, cfg.n_samples)
    tconv = ad.conv2d(h, params["tconv_w"], params["tconv_b"])  # (N, ch, C, T')
    if collect is not None:
        collect["tconv"] = tconv
    h = ad.conv2d(tconv, params["sconv_w"], params["sconv_b"])  # (N, ch, 1, T')
    h = ad.max_pool2d(h, (1, cfg.pool_kernel), (1, cfg.pool_stride))
    h = ad.batch_norm(
        h, params["bn_gamma"], params["bn_beta"],
        params["bn_mean"].data, params["bn_var"].data, train=train,
    )
    h = ad.elu(h)
    h = h.reshape(n, cfg.conv_channels, cfg.pooled_length).transpose((0, 2, 1))  # (N, pooled, ch)
    if collect is not None:
        collect["tsconv_map"] = h
    h = h.reshape(n, cfg.flat_dim)

    h = ad.matmul(h, params["proj_w"]) + params["proj_b"]
    resid = ad.matmul(ad.gelu(h), params["res_w"]) + params["res_b"]
    h = h + resid
    return ad.layer_norm(h, params["ln_gamma"], params["ln_beta"])
