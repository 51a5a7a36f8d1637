"""End-to-end evaluation: zero-shot retrieval per modality, the any-modality
union upper bound, and reconstruction proxies computed through the diffusion
prior and a linear decode back to raw target space."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from . import serialization as ser
from .seeding import STREAM_BOOTSTRAP, rng_for
from .synth import MODALITIES, Preprocessed, SynthDataset


@dataclass
class EvalConfig:
    n_bootstrap: int = 1000
    bootstrap_level: float = 0.95
    ssim_window: int = 4
    n_steps: int = 50
    guidance_scale: float = 7.5

    def to_dict(self) -> dict:
        return asdict(self)


def image_grid_shape(n_values: int) -> tuple[int, int]:
    """Reshape a flat target into the squarest (h, w) grid that divides it."""
    h = int(np.sqrt(n_values))
    while n_values % h != 0:
        h -= 1
    return h, n_values // h


def to_unit_range(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise metrics.MetricError("constant array cannot be range-normalized")
    return (x - lo) / (hi - lo)


def _fit_linear_decoder(embeddings: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares map from embedding space back to raw target space."""
    sol, *_ = np.linalg.lstsq(embeddings, targets, rcond=None)
    return sol


def evaluate_pipeline(
    ds: SynthDataset,
    pp: Preprocessed,
    aligners: dict,
    priors: dict,
    cfg: EvalConfig,
    seed: int,
    oracle: bool = False,
) -> dict:
    """Build the full evaluation report.

    Test repetitions are averaged per image upstream (pp.x_test_avg); each
    expert encodes them, retrieval runs against that modality's embeddings of
    all test images, and the union row counts a query as correct when any
    modality ranks the truth within k. Generation metrics sample the prior
    from the EEG embedding, compare in embedding space (cosine), and decode
    back to raw targets for pixcorr/ssim/two-way/correlation distance.
    With oracle=True the EEG embeddings are replaced by the ground-truth
    modality embeddings, an exact upper bound.
    """
    modalities = tuple(m for m in MODALITIES if m in aligners)
    if not modalities:
        raise ValueError("no aligners given")
    missing = [m for m in modalities if m not in priors]
    if missing:
        raise ValueError(f"missing priors for modalities {missing}")

    rng = rng_for(seed, STREAM_BOOTSTRAP)
    k_top5 = min(5, len(pp.test_image_indices))
    truth = np.arange(len(pp.test_image_indices))
    n_train_images = ds.config.n_train_images

    def ci(per_unit) -> list[float]:
        lo, hi = metrics.bootstrap_mean_ci(np.asarray(per_unit, dtype=np.float64), rng,
                                           n_boot=cfg.n_bootstrap, level=cfg.bootstrap_level)
        return [lo, hi]

    retrieval: dict = {}
    generation: dict = {}
    rankings = []
    per_mod_hits5 = []
    decoded_all, true_all = [], []
    feat_recon_all, feat_true_all = [], []

    for m in modalities:
        aligner = aligners[m]
        table = ds.modality_targets[m]
        candidates = aligner.embed_targets(table[pp.test_image_indices])
        queries = candidates.copy() if oracle else aligner.transform(pp.x_test_avg)

        ranking = metrics.rank_candidates(queries, candidates)
        hits1 = metrics.topk_hits(ranking, truth, 1).astype(np.float64)
        hits5 = metrics.topk_hits(ranking, truth, k_top5).astype(np.float64)
        rankings.append(ranking)
        per_mod_hits5.append(hits5.mean())
        retrieval[m] = {
            "top1": float(hits1.mean()), "top1_ci": ci(hits1),
            "top5": float(hits5.mean()), "top5_ci": ci(hits5),
        }

        samples = priors[m].transform(queries, n_steps=cfg.n_steps,
                                      guidance_scale=cfg.guidance_scale, seed=seed)
        cosines = np.sum(samples * candidates, axis=1)

        decoder = _fit_linear_decoder(
            aligner.embed_targets(table[:n_train_images]), table[:n_train_images])
        decoded = samples @ decoder
        true_raw = table[pp.test_image_indices]
        grid = image_grid_shape(true_raw.shape[1])
        pix = np.array([metrics.pixcorr(d, t) for d, t in zip(decoded, true_raw)])
        ssim_vals = np.array([
            metrics.ssim(to_unit_range(d.reshape(grid)), to_unit_range(t.reshape(grid)),
                         window=cfg.ssim_window)
            for d, t in zip(decoded, true_raw)
        ])
        feat_recon = aligner.frozen_(decoded)
        feat_true = aligner.frozen_(true_raw)
        two_way = metrics.two_way_per_query(feat_recon, feat_true)
        corr_dist = np.array([
            metrics.correlation_distance(a, b) for a, b in zip(feat_recon, feat_true)
        ])

        decoded_all.append(decoded)
        true_all.append(true_raw)
        feat_recon_all.append(feat_recon)
        feat_true_all.append(feat_true)
        generation[m] = {
            "mean_cosine": float(cosines.mean()), "mean_cosine_ci": ci(cosines),
            "pixcorr": float(pix.mean()), "pixcorr_ci": ci(pix),
            "ssim": float(ssim_vals.mean()), "ssim_ci": ci(ssim_vals),
            "two_way": float(two_way.mean()), "two_way_ci": ci(two_way),
            "correlation_distance": float(corr_dist.mean()),
            "correlation_distance_ci": ci(corr_dist),
        }

    union1 = metrics.union_topk_hits(rankings, truth, 1).astype(np.float64)
    union5 = metrics.union_topk_hits(rankings, truth, k_top5).astype(np.float64)
    # the union row is an upper bound, not an achievable accuracy
    retrieval["union_upper_bound"] = {
        "top1": float(union1.mean()), "top1_ci": ci(union1),
        "top5": float(union5.mean()), "top5_ci": ci(union5),
    }
    assert retrieval["union_upper_bound"]["top5"] >= max(per_mod_hits5)

    decoded_cat = np.concatenate(decoded_all, axis=1)
    true_cat = np.concatenate(true_all, axis=1)
    grid = image_grid_shape(true_cat.shape[1])
    pix = np.array([metrics.pixcorr(d, t) for d, t in zip(decoded_cat, true_cat)])
    ssim_vals = np.array([
        metrics.ssim(to_unit_range(d.reshape(grid)), to_unit_range(t.reshape(grid)),
                     window=cfg.ssim_window)
        for d, t in zip(decoded_cat, true_cat)
    ])
    feat_recon_cat = np.concatenate(feat_recon_all, axis=1)
    feat_true_cat = np.concatenate(feat_true_all, axis=1)
    two_way = metrics.two_way_per_query(feat_recon_cat, feat_true_cat)
    corr_dist = np.array([
        metrics.correlation_distance(a, b) for a, b in zip(feat_recon_cat, feat_true_cat)
    ])
    generation["combined"] = {
        "pixcorr": float(pix.mean()), "pixcorr_ci": ci(pix),
        "ssim": float(ssim_vals.mean()), "ssim_ci": ci(ssim_vals),
        "two_way": float(two_way.mean()), "two_way_ci": ci(two_way),
        "correlation_distance": float(corr_dist.mean()),
        "correlation_distance_ci": ci(corr_dist),
    }

    report = {
        "config_hash": ser.config_hash({
            "generation": ds.config.to_dict(), "dataset_seed": ds.seed,
            "eval": cfg.to_dict(), "seed": seed, "oracle": oracle,
        }),
        "n_way": int(len(truth)),
        "oracle": bool(oracle),
        "seeds": {
            "dataset": int(ds.seed),
            "eval": int(seed),
            "aligners": {m: int(aligners[m].seed) for m in modalities},
            "priors": {m: int(priors[m].seed) for m in modalities},
        },
        "retrieval": retrieval,
        "generation": generation,
    }
    return report


def report_to_json(report: dict) -> str:
    return ser.canonical_json(report)


def walk_leaves(node, prefix: str = "") -> list[tuple[str, object]]:
    """Flatten a report into (dotted path, value) pairs, CIs as single leaves."""
    out: list[tuple[str, object]] = []
    if isinstance(node, dict):
        for key, value in node.items():
            out.extend(walk_leaves(value, f"{prefix}.{key}" if prefix else str(key)))
    else:
        out.append((prefix, node))
    return out
