import numpy as np
import pytest
from scipy import stats

from cogcap.metrics import (
    MetricError,
    bootstrap_mean_ci,
    correlation_distance,
    nway_topk,
    pixcorr,
    rank_candidates,
    ssim,
    topk_hits,
    two_way_identification,
    two_way_per_query,
    union_topk,
    union_topk_hits,
)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- retrieval --


def test_identity_retrieval_is_perfect():
    rng = np.random.default_rng(0)
    emb = unit_rows(rng, 16, 8)
    truth = np.arange(16)
    assert nway_topk(emb, emb, truth, 1) == 1.0


def test_full_k_always_perfect():
    rng = np.random.default_rng(1)
    q = unit_rows(rng, 10, 8)
    c = unit_rows(rng, 16, 8)
    assert nway_topk(q, c, np.zeros(10, dtype=int), 16) == 1.0


def test_chance_level_within_binomial_ci():
    rng = np.random.default_rng(2)
    q = unit_rows(rng, 1000, 32)
    c = unit_rows(rng, 16, 32)
    truth = rng.integers(0, 16, size=1000)
    acc = nway_topk(q, c, truth, 1)
    lo = stats.binom.ppf(0.005, 1000, 1 / 16) / 1000
    hi = stats.binom.ppf(0.995, 1000, 1 / 16) / 1000
    assert lo <= acc <= hi


def test_ties_break_to_lowest_index():
    q = np.array([[1.0, 0.0]])
    c = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])  # duplicates at 0 and 1
    ranking = rank_candidates(q, c)
    assert ranking[0, 0] == 0 and ranking[0, 1] == 1


def test_ranking_is_permutation():
    rng = np.random.default_rng(3)
    ranking = rank_candidates(unit_rows(rng, 7, 5), unit_rows(rng, 9, 5))
    for row in ranking:
        assert sorted(row.tolist()) == list(range(9))


def test_rotation_invariance():
    rng = np.random.default_rng(4)
    q = unit_rows(rng, 50, 12)
    c = unit_rows(rng, 16, 12)
    truth = rng.integers(0, 16, size=50)
    rot, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    for k in (1, 5):
        a = nway_topk(q, c, truth, k)
        b = nway_topk(q @ rot, c @ rot, truth, k)
        assert abs(a - b) < 1e-9


def test_topk_validation():
    rng = np.random.default_rng(5)
    ranking = rank_candidates(unit_rows(rng, 4, 6), unit_rows(rng, 8, 6))
    with pytest.raises(MetricError):
        topk_hits(ranking, np.zeros(4, dtype=int), 9)
    with pytest.raises(MetricError):
        topk_hits(ranking, np.zeros(4, dtype=int), 0)
    with pytest.raises(MetricError):
        topk_hits(ranking, np.full(4, 8), 1)


def test_union_single_equals_nway():
    rng = np.random.default_rng(6)
    q = unit_rows(rng, 30, 8)
    c = unit_rows(rng, 16, 8)
    truth = rng.integers(0, 16, size=30)
    ranking = rank_candidates(q, c)
    assert union_topk([ranking], truth, 1) == nway_topk(q, c, truth, 1)


def test_union_disjoint_coverage_is_one():
    # modality A nails even queries, modality B odd queries
    n, k = 6, 4
    truth = np.array([0, 1, 2, 3, 0, 1])
    rank_a = np.tile(np.arange(k), (n, 1))
    rank_b = np.tile(np.arange(k), (n, 1))
    for i in range(n):
        hit, miss = (rank_a, rank_b) if i % 2 == 0 else (rank_b, rank_a)
        hit[i] = np.roll(np.arange(k), -truth[i])        # truth first
        miss[i] = np.roll(np.arange(k), -(truth[i] + 1))  # truth last
    assert union_topk([rank_a, rank_b], truth, 1) == 1.0
    assert nway_topk is not None  # each alone misses half
    assert topk_hits(rank_a, truth, 1).mean() == 0.5
    assert topk_hits(rank_b, truth, 1).mean() == 0.5


def test_union_monotone_in_modalities():
    rng = np.random.default_rng(7)
    truth = rng.integers(0, 12, size=40)
    rankings = [np.stack([rng.permutation(12) for _ in range(40)]) for _ in range(3)]
    for k in (1, 3):
        accs = [union_topk(rankings[:i + 1], truth, k) for i in range(3)]
        assert accs[0] <= accs[1] <= accs[2]
        singles = [topk_hits(r, truth, k).mean() for r in rankings]
        assert accs[2] >= max(singles)
    with pytest.raises(MetricError):
        union_topk_hits([], truth, 1)


# -- reconstruction proxies --


def test_pixcorr_basic_and_golden():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(5, 5))
    assert abs(pixcorr(a, a) - 1.0) < 1e-12
    assert abs(pixcorr(a, -a) + 1.0) < 1e-12
    got = pixcorr(np.array([1.0, 2, 3, 4]), np.array([1.0, 2, 3, 5]))
    oracle = np.corrcoef([1, 2, 3, 4], [1, 2, 3, 5])[0, 1]
    assert abs(got - oracle) < 1e-12
    assert abs(got - 0.982708) < 1e-6


def test_pixcorr_symmetry_and_errors():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=8), rng.normal(size=8)
    assert abs(pixcorr(a, b) - pixcorr(b, a)) < 1e-12
    with pytest.raises(MetricError):
        pixcorr(np.ones(5), np.arange(5.0))
    with pytest.raises(MetricError):
        pixcorr(np.arange(4.0), np.arange(5.0))


def test_correlation_distance():
    a = np.array([1.0, 2, 3, 4])
    assert abs(correlation_distance(a, a)) < 1e-12
    assert abs(correlation_distance(a, -a) - 2.0) < 1e-12


def test_ssim_identical_and_constant():
    rng = np.random.default_rng(10)
    a = rng.uniform(size=(12, 12))
    assert abs(ssim(a, a) - 1.0) < 1e-12
    half = np.full((10, 10), 0.5)
    assert abs(ssim(half, half) - 1.0) < 1e-12


def test_ssim_constant_luminance_golden():
    a = np.full((10, 10), 0.2)
    b = np.full((10, 10), 0.8)
    expected = (2 * 0.2 * 0.8 + 0.01**2) / (0.2**2 + 0.8**2 + 0.01**2)
    got = ssim(a, b)
    assert abs(got - expected) < 1e-12
    assert abs(got - 0.3201 / 0.6801) < 1e-12


def test_ssim_symmetry_and_errors():
    rng = np.random.default_rng(11)
    a = rng.uniform(size=(9, 9))
    b = rng.uniform(size=(9, 9))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    with pytest.raises(MetricError):
        ssim(a, b, window=10)
    with pytest.raises(MetricError):
        ssim(a * 2.0, b)
    with pytest.raises(MetricError):
        ssim(a - 0.5, b)


def test_two_way_perfect_and_confused():
    rng = np.random.default_rng(12)
    feats = rng.normal(size=(6, 20))
    assert two_way_identification(feats, feats) == 1.0
    swapped = feats[[1, 0]]
    assert two_way_identification(swapped[:2], feats[:2]) == 0.0


def test_two_way_chance_near_half():
    rng = np.random.default_rng(13)
    accs = [
        two_way_identification(rng.normal(size=(40, 30)), rng.normal(size=(40, 30)))
        for _ in range(10)
    ]
    # each comparison is a fair coin under independence
    assert 0.4 < np.mean(accs) < 0.6


def test_two_way_errors():
    rng = np.random.default_rng(14)
    with pytest.raises(MetricError):
        two_way_identification(np.ones((3, 5)), rng.normal(size=(3, 5)))
    with pytest.raises(MetricError):
        two_way_identification(rng.normal(size=(1, 5)), rng.normal(size=(1, 5)))


def test_two_way_per_query_mean_matches():
    rng = np.random.default_rng(15)
    recon = rng.normal(size=(9, 11))
    true = rng.normal(size=(9, 11))
    per = two_way_per_query(recon, true)
    assert per.shape == (9,)
    assert abs(per.mean() - two_way_identification(recon, true)) < 1e-12


# -- bootstrap --


def test_bootstrap_contains_point_estimate():
    rng = np.random.default_rng(16)
    values = rng.uniform(size=200)
    lo, hi = bootstrap_mean_ci(values, np.random.default_rng(0))
    assert lo <= values.mean() <= hi
    assert hi - lo < 0.2


def test_bootstrap_deterministic_given_rng():
    values = np.random.default_rng(17).uniform(size=50)
    a = bootstrap_mean_ci(values, np.random.default_rng(5))
    b = bootstrap_mean_ci(values, np.random.default_rng(5))
    assert a == b
    with pytest.raises(MetricError):
        bootstrap_mean_ci(values, np.random.default_rng(0), level=1.5)
