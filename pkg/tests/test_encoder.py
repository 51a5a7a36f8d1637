"""EEG expert encoder: geometry, parameter counts, determinism, gradients."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cogcap import autodiff as ad
from cogcap import encoder as enc
from cogcap.encoder import EncoderConfig


def desk_cfg():
    return EncoderConfig(n_channels=16, n_samples=50)


def tiny_cfg():
    return EncoderConfig(
        n_channels=4, n_samples=12, temporal_kernel=5, conv_channels=3,
        pool_kernel=2, pool_stride=2, embed_dim=6,
    )


def test_desk_shape():
    cfg = desk_cfg()
    params = enc.init_params(cfg, seed=0)
    out = enc.forward(cfg, params, np.random.default_rng(0).normal(size=(8, 16, 50)))
    assert out.shape == (8, 64)


def test_desk_parameter_count_formula():
    cfg = desk_cfg()
    t, c, ch, d = 50, 16, 40, 64
    pooled = ((50 - 25 + 1) - 6) // 2 + 1
    expected = (
        4 * t * t + 3 * t      # attention projections, no key bias
        + t * t + t            # per-channel linear
        + ch * 25 + ch         # temporal conv
        + ch * ch * c + ch     # spatial conv
        + 2 * ch               # batch norm scale/shift
        + pooled * ch * d + d  # projection
        + d * d + d            # residual branch
        + 2 * d                # layer norm
    )
    assert enc.parameter_count(cfg) == expected
    params = enc.init_params(cfg, seed=1)
    assert sum(p.size for p in params.values() if p.requires_grad) == expected


def test_full_scale_geometry():
    cfg = EncoderConfig(
        n_channels=63, n_samples=250, temporal_kernel=25, conv_channels=40,
        pool_kernel=51, pool_stride=5, embed_dim=1024,
    )
    assert cfg.conv_length == 226
    assert cfg.pooled_length == 36
    assert cfg.flat_dim == 1440
    params = enc.init_params(cfg, seed=0)
    collect = {}
    out = enc.forward(cfg, params, np.zeros((2, 63, 250)), collect=collect)
    assert collect["tsconv_map"].shape == (2, 36, 40)
    assert out.shape == (2, 1024)


def test_init_deterministic():
    cfg = tiny_cfg()
    a = enc.init_params(cfg, seed=3)
    b = enc.init_params(cfg, seed=3)
    c = enc.init_params(cfg, seed=4)
    assert set(a) == set(b)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
    assert a["attn_wq"].data.tobytes() != c["attn_wq"].data.tobytes()


def test_zero_weights_zero_input_gives_zero_output():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=0)
    for name, p in params.items():
        if name.startswith("ln_"):
            continue
        if name == "bn_gamma":
            continue  # unit scale on a zero map still yields zeros
        if name not in ("pos_table", "bn_mean", "bn_var"):
            p.data[...] = 0.0
    params["pos_table"].data[...] = 0.0
    out = enc.forward(cfg, params, np.zeros((4, cfg.n_channels, cfg.n_samples)), train=True)
    assert_allclose(out.data, 0.0, atol=1e-9)


def test_eval_forward_deterministic():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=5)
    x = np.random.default_rng(1).normal(size=(6, cfg.n_channels, cfg.n_samples))
    a = enc.forward(cfg, params, x).data
    b = enc.forward(cfg, params, x).data
    assert a.tobytes() == b.tobytes()


def test_eval_batch_equivariance():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=6)
    x = np.random.default_rng(2).normal(size=(5, cfg.n_channels, cfg.n_samples))
    perm = np.array([3, 0, 4, 1, 2])
    out = enc.forward(cfg, params, x).data
    out_perm = enc.forward(cfg, params, x[perm]).data
    assert_allclose(out_perm, out[perm], atol=1e-12)


def test_train_mode_updates_running_stats_eval_does_not():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=7)
    x = np.random.default_rng(3).normal(size=(4, cfg.n_channels, cfg.n_samples))
    m0 = params["bn_mean"].data.copy()
    enc.forward(cfg, params, x, train=False)
    assert_allclose(params["bn_mean"].data, m0)
    enc.forward(cfg, params, x, train=True)
    assert not np.allclose(params["bn_mean"].data, m0)


def test_input_shape_rejected():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=0)
    with pytest.raises(ad.ShapeError):
        enc.forward(cfg, params, np.zeros((2, 5, cfg.n_samples)))


def test_config_validation():
    with pytest.raises(ad.ShapeError):
        EncoderConfig(n_channels=4, n_samples=10, temporal_kernel=11)
    with pytest.raises(ad.ShapeError):
        EncoderConfig(n_channels=4, n_samples=12, temporal_kernel=5, pool_kernel=40)


def test_full_gradient_finite_diff():
    """Loss through the whole encoder (eval-mode batch norm keeps fn pure)."""
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=8)
    x = np.random.default_rng(4).normal(size=(3, cfg.n_channels, cfg.n_samples))
    probe = np.random.default_rng(5).normal(size=(3, cfg.embed_dim))
    train_params = enc.trainable(params)

    def loss():
        out = enc.forward(cfg, params, x, train=False)
        return (out * ad.Tensor(probe)).sum()

    err = ad.finite_diff_check(loss, train_params, 1e-5)
    assert err < 1e-4, err


def test_collected_activations_shapes():
    cfg = tiny_cfg()
    params = enc.init_params(cfg, seed=9)
    collect = {}
    enc.forward(cfg, params, np.zeros((2, 4, 12)), collect=collect)
    assert collect["tconv"].shape == (2, 3, 4, 8)
    assert collect["tsconv_map"].shape == (2, cfg.pooled_length, 3)
