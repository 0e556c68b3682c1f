import itertools
import math

import numpy as np
import pytest

from sdikit.metrics import (auc_score, balanced_accuracy, canonical_order, classification_metrics,
                            crossval, downsample_balance, plain_folds, regression_metrics,
                            stratified_folds)
from sdikit.models import ModelSpec


def test_confusion_hand_case():
    # TP=2, FP=1, FN=1, TN=6
    y = [1, 1, 0, 1] + [0] * 6
    p = [1, 1, 1, 0] + [0] * 6
    m = classification_metrics(y, p)
    assert m["precision"] == pytest.approx(2 / 3)
    assert m["recall"] == pytest.approx(2 / 3)
    assert m["f1"] == pytest.approx(2 / 3)
    assert m["accuracy"] == pytest.approx(0.8)


def test_degenerate_precision_is_zero():
    m = classification_metrics([1, 0, 0], [0, 0, 0])
    assert m["precision"] == 0.0 and m["f1"] == 0.0


def _pairwise_auc(y, s):
    pos = [v for v, t in zip(s, y) if t]
    neg = [v for v, t in zip(s, y) if not t]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = rng.integers(2, 30)
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 5, n).astype(float)   # plenty of ties
        assert auc_score(y, s) == pytest.approx(_pairwise_auc(y, s), abs=1e-12)
    assert math.isnan(auc_score([1, 1], [0.2, 0.3]))


def test_regression_hand_case():
    m = regression_metrics([1.0, 2.0], [1.0, 5.0])
    assert m["mae"] == pytest.approx(1.5)
    assert m["rmse"] == pytest.approx(math.sqrt(4.5))


def test_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        classification_metrics([0, 1], [0])
    with pytest.raises(ValueError, match="length"):
        regression_metrics([0.0, 1.0], [0.0])


def test_balanced_accuracy_hand_case():
    assert balanced_accuracy([0, 0, 0, 1], [0, 0, 1, 1]) == pytest.approx((2 / 3 + 1) / 2)


def test_stratified_folds_balance_classes():
    y = np.array([0] * 53 + [1] * 17)
    folds = stratified_folds(y, 5, seed=9)
    for f in range(5):
        counts = np.bincount(y[folds == f], minlength=2)
        assert 10 <= counts[0] <= 11 and 3 <= counts[1] <= 4
    assert np.array_equal(folds, stratified_folds(y, 5, seed=9))
    with pytest.raises(ValueError):
        stratified_folds(np.array([0] * 10 + [1] * 3), 5, 0)


def test_plain_folds_sizes():
    folds = plain_folds(23, 5, 1)
    assert sorted(np.bincount(folds).tolist()) == [4, 4, 5, 5, 5]


def test_downsample_balance():
    y = np.array([0] * 30 + [1] * 7)
    idx = downsample_balance(y, np.random.default_rng(0))
    assert np.bincount(y[idx]).tolist() == [7, 7]
    assert set(np.flatnonzero(y == 1)) <= set(idx)


def test_crossval_ignores_row_order():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(120, 3))
    y = (x[:, 0] > 0).astype(int)
    spec = ModelSpec("logreg")
    a = crossval(x, y, spec, 5, seed=3)
    perm = rng.permutation(120)
    b = crossval(x[perm], y[perm], spec, 5, seed=3)
    assert a.mean == b.mean and a.std == b.std


def test_crossval_fold_std_is_population():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(60, 2))
    y = x[:, 0] * 2 + rng.normal(size=60) * 0.1
    m = crossval(x, y, ModelSpec("ridge"), 4, seed=0)
    assert m.n_folds == 4 and m["mae"] < 0.2 and m.std["mae"] >= 0


def test_leave_one_out():
    x = np.arange(8, dtype=float)[:, None]
    y = 2 * x[:, 0] + 1
    m = crossval(x, y, ModelSpec("ridge", {"l2": 0.0}), k_folds=8, seed=0)
    assert m["mae"] == pytest.approx(0.0, abs=1e-9)


def test_canonical_order_is_content_based():
    x = np.array([[2.0], [1.0], [1.0]])
    y = np.array([0, 1, 0])
    order = canonical_order(x, y)
    assert [(y[i], x[i, 0]) for i in order] == [(0, 1.0), (0, 2.0), (1, 1.0)]
    for perm in itertools.permutations(range(3)):
        p = list(perm)
        o = canonical_order(x[p], y[p])
        assert [(y[p][i], x[p][i, 0]) for i in o] == [(0, 1.0), (0, 2.0), (1, 1.0)]
