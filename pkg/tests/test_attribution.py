"""Tests for Grad-CAM channel/time saliency over the encoder's temporal-conv map."""

import numpy as np
import pytest
from scipy import stats

from cogcap import encoder
from cogcap.attribution import SaliencyMap, average_saliency, gradcam
from cogcap.contrastive import AlignConfig, train_alignment
from cogcap.synth import MODALITIES, GenerationConfig, generate_dataset, preprocess


def small_setup(seed=0, n=6, c=5, t=32):
    cfg = encoder.EncoderConfig(
        n_channels=c, n_samples=t, temporal_kernel=7, conv_channels=4,
        pool_kernel=4, pool_stride=2, embed_dim=8,
    )
    params = encoder.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    signals = rng.standard_normal((n, c, t))
    targets = rng.standard_normal((n, cfg.embed_dim))
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    return cfg, params, signals, targets


def test_saliency_map_validation():
    ok = np.array([0.5, 0.5])
    SaliencyMap(channel_saliency=ok, time_saliency=ok, modality="image", n_trials=1)
    with pytest.raises(ValueError):
        SaliencyMap(channel_saliency=np.array([0.5, -0.5]), time_saliency=ok,
                    modality="image", n_trials=1)
    with pytest.raises(ValueError):
        SaliencyMap(channel_saliency=np.zeros((2, 2)), time_saliency=ok,
                    modality="image", n_trials=1)


def test_saliency_vectors_sum_to_one():
    cfg, params, signals, targets = small_setup()
    sal = gradcam(cfg, params, signals, targets, "image")
    assert not sal.all_zero
    assert abs(sal.channel_saliency.sum() - 1.0) < 1e-9
    assert abs(sal.time_saliency.sum() - 1.0) < 1e-9
    assert sal.channel_saliency.shape == (cfg.n_channels,)
    assert sal.time_saliency.shape == (cfg.n_samples,)
    assert (sal.channel_saliency >= 0).all() and (sal.time_saliency >= 0).all()
    assert sal.n_trials == signals.shape[0]


def test_zero_spatial_weights_give_flagged_all_zero_map():
    cfg, params, signals, targets = small_setup()
    params["sconv_w"].data[...] = 0.0
    sal = gradcam(cfg, params, signals, targets, "image")
    assert sal.all_zero
    assert np.array_equal(sal.channel_saliency, np.zeros(cfg.n_channels))
    assert np.array_equal(sal.time_saliency, np.zeros(cfg.n_samples))


def test_positive_rescale_of_target_is_invisible():
    # ReLU + normalization kill any positive scaling of the score, exactly
    cfg, params, signals, targets = small_setup(seed=3)
    base = gradcam(cfg, params, signals, targets, "image")
    doubled = gradcam(cfg, params, signals, 2.0 * targets, "image")
    assert np.array_equal(base.channel_saliency, doubled.channel_saliency)
    assert np.array_equal(base.time_saliency, doubled.time_saliency)


def test_gradcam_rejects_mismatched_shapes():
    cfg, params, signals, targets = small_setup()
    with pytest.raises(Exception):
        gradcam(cfg, params, signals[:, :-1, :], targets, "image")
    with pytest.raises(Exception):
        gradcam(cfg, params, signals, targets[:-1], "image")


def unit_map(channel, time, modality="image", n=1):
    return SaliencyMap(channel_saliency=np.asarray(channel, dtype=float),
                       time_saliency=np.asarray(time, dtype=float),
                       modality=modality, n_trials=n)


def test_average_of_single_map_is_itself():
    m = unit_map([0.25, 0.75], [0.5, 0.5])
    avg = average_saliency([m])
    assert np.allclose(avg.channel_saliency, m.channel_saliency)
    assert np.allclose(avg.time_saliency, m.time_saliency)
    assert avg.n_trials == m.n_trials


def test_average_of_identical_maps_is_same_map():
    m1 = unit_map([0.25, 0.75], [0.5, 0.5], n=2)
    m2 = unit_map([0.25, 0.75], [0.5, 0.5], n=3)
    avg = average_saliency([m1, m2])
    assert np.allclose(avg.channel_saliency, [0.25, 0.75])
    assert avg.n_trials == 5


def test_average_of_complementary_maps_is_uniform():
    m1 = unit_map([1.0, 0.0], [1.0, 0.0])
    m2 = unit_map([0.0, 1.0], [0.0, 1.0])
    avg = average_saliency([m1, m2])
    assert np.allclose(avg.channel_saliency, [0.5, 0.5])
    assert np.allclose(avg.time_saliency, [0.5, 0.5])


def test_average_rejects_mixed_modalities_and_shapes():
    m1 = unit_map([1.0, 0.0], [1.0, 0.0], modality="image")
    m2 = unit_map([0.0, 1.0], [0.0, 1.0], modality="text")
    with pytest.raises(ValueError):
        average_saliency([m1, m2])
    m3 = unit_map([1.0, 0.0, 0.0], [1.0, 0.0], modality="image")
    with pytest.raises(ValueError):
        average_saliency([m1, m3])
    with pytest.raises(ValueError):
        average_saliency([])


def signal_channel_mass(snr, seed):
    """Train aligners on data whose latent signal lives on channels {0,1} only,
    then measure the modality-averaged saliency mass landing on those channels."""
    gen = GenerationConfig(
        n_concepts_train=16, n_images_per_concept=2, n_repetitions=3,
        n_concepts_test=8, n_test_repetitions=4, n_channels=8,
        n_samples_raw=100, latent_dim=2, snr=snr, modality_private_frac=0.0,
        signal_channels=[0, 1],
    )
    ds = generate_dataset(gen, seed)
    pp = preprocess(ds)
    align_cfg = AlignConfig(embed_dim=16, temporal_kernel=9, conv_channels=8,
                            pool_kernel=4, pool_stride=2, batch_size=32,
                            epochs=60, lr=3e-3)
    fitted, _ = train_alignment(pp, ds.modality_targets, align_cfg, seed=seed)
    maps = []
    for m in MODALITIES:
        aligner = fitted[m]
        targets = aligner.embed_targets(ds.modality_targets[m][pp.test_image_indices])
        sal = gradcam(aligner.encoder_config_, aligner.params_, pp.x_test_avg, targets, m)
        sal.modality = "image"  # pool the three experts into one average
        maps.append(sal)
    return average_saliency(maps).channel_saliency[:2].sum()


def test_saliency_mass_on_signal_channels_grows_with_snr():
    # trend statistic averaged over training seeds to smooth optimization noise
    seeds = (31, 32, 33)
    snrs = (1.0, 4.0, 16.0)
    mean_masses = [np.mean([signal_channel_mass(s, sd) for sd in seeds]) for s in snrs]
    rho = stats.spearmanr(snrs, mean_masses).statistic
    assert rho > 0, f"saliency mass not increasing in snr: {mean_masses}"
