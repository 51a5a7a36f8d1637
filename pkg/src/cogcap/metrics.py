"""Retrieval and reconstruction-proxy metrics, bootstrap intervals, and the
end-to-end evaluation report."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Degenerate metric input (zero variance, bad range, bad shapes)."""


# -- retrieval --------------------------------------------------------------


def rank_candidates(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Cosine ranking, best first; ties resolve to the lowest candidate index.

    Returns (Q, K) integer array of candidate indices.
    """
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    if q.ndim != 2 or c.ndim != 2 or q.shape[1] != c.shape[1]:
        raise MetricError(f"rank_candidates: queries {q.shape} vs candidates {c.shape}")
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    cn = np.linalg.norm(c, axis=1, keepdims=True)
    if np.any(qn == 0) or np.any(cn == 0):
        raise MetricError("rank_candidates: zero-norm row")
    sims = (q / qn) @ (c / cn).T
    # stable sort on negated similarity keeps the lowest index first on ties
    return np.argsort(-sims, axis=1, kind="stable")


def topk_hits(rankings: np.ndarray, truth: np.ndarray, k: int) -> np.ndarray:
    """Boolean per-query hit vector from a (Q, K) ranking."""
    rankings = np.asarray(rankings)
    truth = np.asarray(truth)
    n_candidates = rankings.shape[1]
    if not (1 <= k <= n_candidates):
        raise MetricError(f"k={k} outside [1, {n_candidates}]")
    if truth.shape[0] != rankings.shape[0]:
        raise MetricError(f"{rankings.shape[0]} rankings vs {truth.shape[0]} truths")
    if truth.min() < 0 or truth.max() >= n_candidates:
        raise MetricError("truth index outside candidate range")
    return (rankings[:, :k] == truth[:, None]).any(axis=1)


def nway_topk(queries: np.ndarray, candidates: np.ndarray, truth: np.ndarray, k: int) -> float:
    """Fraction of queries whose true candidate ranks in the top k by cosine."""
    return float(topk_hits(rank_candidates(queries, candidates), truth, k).mean())


def union_topk_hits(rankings: list[np.ndarray], truth: np.ndarray, k: int) -> np.ndarray:
    """A query counts if any of the per-modality rankings puts truth in its top k."""
    if not rankings:
        raise MetricError("union over zero rankings")
    hits = topk_hits(rankings[0], truth, k)
    for r in rankings[1:]:
        hits = hits | topk_hits(r, truth, k)
    return hits


def union_topk(rankings: list[np.ndarray], truth: np.ndarray, k: int) -> float:
    return float(union_topk_hits(rankings, truth, k).mean())


# -- reconstruction proxies -------------------------------------------------


def pixcorr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation over flattened values."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise MetricError(f"pixcorr: shapes {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    va, vb = (da * da).sum(), (db * db).sum()
    if va == 0.0 or vb == 0.0:
        raise MetricError("pixcorr: zero-variance input")
    return float((da * db).sum() / np.sqrt(va * vb))


def correlation_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - Pearson on features; lower is better."""
    return 1.0 - pixcorr(a, b)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Mean structural similarity over all valid uniform windows.

    Inputs are 2-d grayscale arrays in [0, 1]; moments use the biased
    (divide by n) estimator over each window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise MetricError(f"ssim: need matching 2-d arrays, got {a.shape} vs {b.shape}")
    h, w = a.shape
    if window < 1 or window > min(h, w):
        raise MetricError(f"ssim: window {window} does not fit image {a.shape}")
    for name, x in (("first", a), ("second", b)):
        if x.min() < 0.0 or x.max() > 1.0:
            raise MetricError(f"ssim: {name} input outside [0, 1]")

    def win_mean(x):
        view = np.lib.stride_tricks.sliding_window_view(x, (window, window))
        return view.mean(axis=(-2, -1))

    mu_a, mu_b = win_mean(a), win_mean(b)
    var_a = win_mean(a * a) - mu_a**2
    var_b = win_mean(b * b) - mu_b**2
    cov = win_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def two_way_per_query(recon: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Per-query fraction of distractors beaten by the true pairing."""
    recon = np.asarray(recon, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if recon.ndim != 2 or recon.shape != true.shape or recon.shape[0] < 2:
        raise MetricError(f"two_way: need matching (Q>=2, F) arrays, got {recon.shape} vs {true.shape}")

    def center_unit(x):
        d = x - x.mean(axis=1, keepdims=True)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(n == 0):
            raise MetricError("two_way: constant row has no correlation")
        return d / n

    corr = center_unit(recon) @ center_unit(true).T  # corr[i, j]
    q = corr.shape[0]
    own = np.diag(corr)[:, None]
    wins = own > corr
    np.fill_diagonal(wins, False)
    return wins.sum(axis=1) / (q - 1)


def two_way_identification(recon: np.ndarray, true: np.ndarray) -> float:
    """Ordered-pair accuracy: corr(recon_i, true_i) > corr(recon_i, true_j).

    Ties count as failures, so the statistic is deterministic.
    """
    return float(two_way_per_query(recon, true).mean())


# -- uncertainty ------------------------------------------------------------


def bootstrap_mean_ci(
    per_unit: np.ndarray,
    rng: np.random.Generator,
    n_boot: int = 1000,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile CI for the mean by resampling units with replacement."""
    per_unit = np.asarray(per_unit, dtype=np.float64)
    if per_unit.ndim != 1 or per_unit.size < 1:
        raise MetricError(f"bootstrap over shape {per_unit.shape}")
    if not (0.0 < level < 1.0):
        raise MetricError(f"bad confidence level {level}")
    n = per_unit.size
    idx = rng.integers(0, n, size=(n_boot, n))
    means = per_unit[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
