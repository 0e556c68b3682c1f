"""Classification/regression metrics and seeded cross-validation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .models import ModelSpec, scores_of, train

CLASSIFICATION_KEYS = ("accuracy", "precision", "recall", "f1", "auc")
REGRESSION_KEYS = ("mae", "rmse")


@dataclass(frozen=True)
class Metrics:
    """Per-metric mean and population std over folds (std is 0 for a single evaluation)."""
    mean: dict
    std: dict = field(default_factory=dict)
    n_folds: int = 1

    def __getitem__(self, key):
        return self.mean[key]

    def keys(self):
        return self.mean.keys()

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std), "n_folds": self.n_folds}

    @classmethod
    def aggregate(cls, folds: list) -> "Metrics":
        keys = list(folds[0].keys())
        mean, std = {}, {}
        for k in keys:
            v = np.array([f[k] for f in folds], dtype=np.float64)
            v = v[~np.isnan(v)]
            mean[k] = float(v.mean()) if v.size else float("nan")
            std[k] = float(v.std()) if v.size else float("nan")
        return cls(mean, std, len(folds))


def auc_score(y_true, scores) -> float:
    """Mann-Whitney AUC with average ranks for ties; NaN when one class is absent."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def classification_metrics(y_true, y_pred, scores=None) -> Metrics:
    y_true = np.asarray(y_true).astype(np.int64)
    y_pred = np.asarray(y_pred).astype(np.int64)
    if len(y_true) != len(y_pred) or (scores is not None and len(scores) != len(y_true)):
        raise ValueError(f"length mismatch: {len(y_true)} labels vs {len(y_pred)} predictions"
                         + ("" if scores is None else f" vs {len(scores)} scores"))
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    fp = int(((y_true == 0) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    out = {
        "accuracy": float((y_true == y_pred).mean()) if len(y_true) else float("nan"),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "auc": auc_score(y_true, y_pred if scores is None else scores),
    }
    return Metrics(out, {k: 0.0 for k in out})


def balanced_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    rates = [float((y_pred[y_true == c] == c).mean()) for c in np.unique(y_true)]
    return float(np.mean(rates))


def regression_metrics(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {len(y_true)} targets vs {len(y_pred)} predictions")
    e = y_pred - y_true
    out = {"mae": float(np.abs(e).mean()), "rmse": float(np.sqrt((e ** 2).mean()))}
    return Metrics(out, {k: 0.0 for k in out})


def canonical_order(x, y) -> np.ndarray:
    """Row order determined by content alone, so results ignore input row order."""
    x = np.asarray(x, dtype=np.float64)
    keys = [np.asarray(y, dtype=np.float64)] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1])


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold index per row; each class is dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            raise ValueError(f"class {c} has {len(members)} members, fewer than {k} folds")
        members = rng.permutation(members)
        folds[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    return folds


def plain_folds(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def downsample_balance(y, rng: np.random.Generator) -> np.ndarray:
    """Indices keeping every minority row and an equal-size random subset of each other class."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    m = counts.min()
    keep = [np.sort(rng.choice(np.flatnonzero(y == c), size=m, replace=False)) for c in classes]
    return np.sort(np.concatenate(keep))


def evaluate(model, spec: ModelSpec, x, y) -> Metrics:
    if spec.is_classifier:
        return classification_metrics(y, model.predict(x), scores_of(model, x))
    return regression_metrics(y, model.predict(x))


def crossval(x, y, model_spec: ModelSpec, k_folds: int = 5, seed: int = 0,
             balance: bool = False) -> Metrics:
    """k-fold CV; stratified for classifiers. ``balance`` down-samples training folds only.

    ``k_folds == len(y)`` runs leave-one-out without stratification.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    if k_folds < 2 or n < k_folds:
        raise ValueError(f"need 2 <= k_folds <= n, got k={k_folds}, n={n}")
    order = canonical_order(x, y)
    x, y = x[order], y[order]
    if model_spec.is_classifier and k_folds < n:
        folds = stratified_folds(y, k_folds, seed)
    else:
        folds = plain_folds(n, k_folds, seed)
    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    results = []
    for f in range(k_folds):
        tr = np.flatnonzero(folds != f)
        te = np.flatnonzero(folds == f)
        if balance and model_spec.is_classifier:
            tr = tr[downsample_balance(y[tr], rng)]
        model = train(x[tr], y[tr], model_spec)
        results.append(evaluate(model, model_spec, x[te], y[te]))
    return Metrics.aggregate(results)
