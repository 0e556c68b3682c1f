import itertools
import math

import numpy as np
import pytest
from scipy.stats import pearsonr

from sdikit.analytics import (cluster_labelset, correlation_matrix, factor_regressions,
                              factor_scores, kmeans, ols_interactions, pearson,
                              validity_indices)
from sdikit.scales import DASS21

SIX = np.array([[0, 0], [2, 0], [1, 3], [10, 0], [12, 0], [11, 3]], dtype=float)
SIX_LABELS = np.array([0, 0, 0, 1, 1, 1])


def test_validity_hand_oracles():
    v = validity_indices(SIX, SIX_LABELS)
    # both clusters: centroid offsets sqrt2, sqrt2, 2; centroids 10 apart
    scatter = (2 * math.sqrt(2) + 2) / 3
    assert v["davies_bouldin"] == pytest.approx(2 * scatter / 10, abs=1e-9)
    # between = 3*25 + 3*25, within = 8 + 8, k = 2, n = 6
    assert v["calinski_harabasz"] == pytest.approx(150 / (16 / 4), abs=1e-9)


def _silhouette_loop(x, labels):
    out = []
    for i in range(len(x)):
        same = [j for j in range(len(x)) if labels[j] == labels[i] and j != i]
        if not same:
            out.append(0.0)
            continue
        dist = lambda j: math.dist(x[i], x[j])  # noqa: E731
        a = sum(map(dist, same)) / len(same)
        b = min(sum(map(dist, idx)) / len(idx) for idx in
                ([j for j in range(len(x)) if labels[j] == c] for c in set(labels)
                 if c != labels[i]))
        out.append((b - a) / max(a, b))
    return sum(out) / len(out)


def test_silhouette_matches_loop():
    rng = np.random.default_rng(4)
    for _ in range(30):
        x = rng.normal(size=(12, 2))
        labels = rng.integers(0, 3, 12)
        if len(set(labels)) < 2:
            continue
        s = validity_indices(x, labels)["silhouette"]
        assert -1 <= s <= 1
        assert s == pytest.approx(_silhouette_loop(x.tolist(), labels.tolist()), abs=1e-12)
    assert validity_indices(SIX, SIX_LABELS)["silhouette"] == pytest.approx(
        _silhouette_loop(SIX.tolist(), SIX_LABELS.tolist()), abs=1e-12)


def _best_partition(x):
    best = np.inf
    for bits in itertools.product([0, 1], repeat=len(x) - 1):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        best = min(best, sum(((x[lab == c] - x[lab == c].mean(0)) ** 2).sum() for c in (0, 1)))
    return best


def test_kmeans_matches_exhaustive_optimum():
    rng = np.random.default_rng(123)
    for trial in range(100):
        x = rng.normal(size=(8, 2))
        res = kmeans(x, 2, seed=trial)
        assert res.inertia == pytest.approx(_best_partition(x), abs=1e-9)


def test_kmeans_deterministic_and_valid(default_cohort):
    x = factor_scores(default_cohort.responses, default_cohort.specs)
    a, b = kmeans(x, 3, seed=1), kmeans(x, 3, seed=1)
    assert np.array_equal(a.assignments, b.assignments)
    assert a.inertia == b.inertia
    assert -1 <= a.validity["silhouette"] <= 1
    assert np.all(np.diff(a.inertia_history) <= 1e-9 * a.inertia_history[0])


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 1)


def test_cluster_schemes():
    x = np.array([[0.0], [0.1], [5.0], [5.1], [10.0], [10.1]])
    res = kmeans(x, 3, seed=0)
    ls = cluster_labelset(res, "Cluster3Binary")
    assert ls.retained.tolist() == [True, True, False, False, True, True]
    assert ls.labels.tolist() == [0, 0, -1, -1, 1, 1]
    two = cluster_labelset(kmeans(x[[0, 1, 4, 5]], 2, seed=0), "Cluster2")
    assert two.labels.tolist() == [0, 0, 1, 1]
    with pytest.raises(ValueError):
        cluster_labelset(res, "Cluster2")


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(9)
    for _ in range(20):
        p = rng.normal(size=(40, 2)) * 5
        y = rng.normal(size=40) + p[:, 0] * p[:, 1]
        fit = ols_interactions(y, p, ("a", "b"))
        a = np.column_stack([np.ones(40), p[:, 0], p[:, 1], p[:, 0] * p[:, 1]])
        beta = np.linalg.solve(a.T @ a, a.T @ y)
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-8)
        assert list(fit.interactions) == ["a*b"]


def test_ols_exact_fit_r2():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(30, 2))
    y = 1.5 + 2 * p[:, 0] - p[:, 1] + 0.5 * p[:, 0] * p[:, 1]
    fit = ols_interactions(y, p)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-9)
    assert fit.main["x1"] == pytest.approx(2.0, abs=1e-9)


def test_ols_rank_deficiency_names_column():
    p = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(ValueError, match="x2"):
        ols_interactions(np.arange(10.0), p)


def test_pearson_against_scipy():
    rng = np.random.default_rng(6)
    for _ in range(20):
        x, y = rng.normal(size=(2, 50))
        assert pearson(x, y) == pytest.approx(pearsonr(x, y)[0], abs=1e-12)
    with pytest.raises(ValueError, match="constant"):
        pearson(np.ones(5), np.arange(5.0))


def test_factor_tables(small_cohort):
    x = factor_scores(small_cohort.responses, DASS21)
    assert x.shape == (600, 3) and x.max() <= 42
    corr = correlation_matrix(x)
    assert set(corr) == {("depression", "anxiety"), ("depression", "stress"),
                         ("anxiety", "stress")}
    fits = factor_regressions(x)
    assert set(fits) == set(DASS21)
    assert fits["anxiety"].predictors == ("depression", "stress")
    assert 0 <= fits["anxiety"].r_squared <= 1
