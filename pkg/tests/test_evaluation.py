import numpy as np
import pytest

from cogcap.contrastive import AlignConfig, train_alignment
from cogcap.evaluation import (
    EvalConfig,
    evaluate_pipeline,
    image_grid_shape,
    report_to_json,
    to_unit_range,
    walk_leaves,
)
from cogcap.prior import EmbeddingPrior
from cogcap.synth import MODALITIES, GenerationConfig, generate_dataset, preprocess


def test_image_grid_shape():
    assert image_grid_shape(32) == (4, 8)
    assert image_grid_shape(16) == (4, 4)
    assert image_grid_shape(48) == (6, 8)
    assert image_grid_shape(7) == (1, 7)


def test_to_unit_range():
    x = np.array([2.0, 4.0, 6.0])
    assert np.allclose(to_unit_range(x), [0.0, 0.5, 1.0])
    with pytest.raises(Exception):
        to_unit_range(np.ones(4))


@pytest.fixture(scope="module")
def small_pipeline():
    cfg = GenerationConfig(
        n_concepts_train=12, n_images_per_concept=2, n_repetitions=2,
        n_concepts_test=6, n_test_repetitions=4, n_channels=8,
        n_samples_raw=100, latent_dim=8, snr=8.0, modality_private_frac=0.0,
    )
    ds = generate_dataset(cfg, seed=21)
    pp = preprocess(ds)
    align_cfg = AlignConfig(embed_dim=16, temporal_kernel=9, conv_channels=8,
                            pool_kernel=4, pool_stride=2, batch_size=24, epochs=3)
    aligners, _ = train_alignment(pp, ds.modality_targets, align_cfg, seed=4)
    priors = {}
    for m in MODALITIES:
        cond = aligners[m].transform(pp.x_train)
        target = aligners[m].embed_targets(ds.modality_targets[m][pp.train_image_indices])
        priors[m] = EmbeddingPrior(modality=m, embed_dim=16, n_blocks=2, hidden_mult=2,
                                   t_steps=20, batch_size=24, epochs=5, n_steps=10,
                                   guidance_scale=2.0, seed=4).fit(cond, target)
    return ds, pp, aligners, priors


def eval_cfg():
    return EvalConfig(n_bootstrap=200, ssim_window=4, n_steps=10, guidance_scale=2.0)


def test_report_structure(small_pipeline):
    ds, pp, aligners, priors = small_pipeline
    report = evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=1)
    assert report["n_way"] == 6
    assert set(report["retrieval"]) == set(MODALITIES) | {"union_upper_bound"}
    assert set(report["generation"]) == set(MODALITIES) | {"combined"}
    for m, block in report["retrieval"].items():
        assert 0.0 <= block["top1"] <= block["top5"] <= 1.0
        lo, hi = block["top1_ci"]
        assert lo <= block["top1"] <= hi
    union = report["retrieval"]["union_upper_bound"]
    for k in ("top1", "top5"):
        assert union[k] >= max(report["retrieval"][m][k] for m in MODALITIES)
    for block in report["generation"].values():
        assert -1.0 <= block["pixcorr"] <= 1.0
        assert 0.0 <= block["two_way"] <= 1.0


def test_report_byte_stable(small_pipeline):
    ds, pp, aligners, priors = small_pipeline
    a = report_to_json(evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=2))
    b = report_to_json(evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=2))
    assert a == b
    c = report_to_json(evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=3))
    assert c != a


def test_oracle_mode_perfect_retrieval(small_pipeline):
    ds, pp, aligners, priors = small_pipeline
    report = evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=1, oracle=True)
    for m in MODALITIES:
        assert report["retrieval"][m]["top1"] == 1.0
    assert report["retrieval"]["union_upper_bound"]["top1"] == 1.0
    assert report["oracle"] is True


def test_missing_prior_rejected(small_pipeline):
    ds, pp, aligners, priors = small_pipeline
    partial = {m: priors[m] for m in ("image", "text")}
    with pytest.raises(ValueError):
        evaluate_pipeline(ds, pp, aligners, partial, eval_cfg(), seed=1)
    with pytest.raises(ValueError):
        evaluate_pipeline(ds, pp, {}, priors, eval_cfg(), seed=1)


def test_walk_leaves_unique_paths(small_pipeline):
    ds, pp, aligners, priors = small_pipeline
    report = evaluate_pipeline(ds, pp, aligners, priors, eval_cfg(), seed=1)
    leaves = walk_leaves(report)
    paths = [p for p, _ in leaves]
    assert len(paths) == len(set(paths))
    assert "retrieval.image.top1" in paths
    assert "generation.combined.ssim" in paths
    assert "config_hash" in paths
