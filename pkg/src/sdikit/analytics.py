"""Inter-factor correlation, interaction regression and k-means clustering."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .scales import FACTORS, LabelSet, Scheme


def factor_scores(responses: dict, specs: dict, factors=FACTORS) -> np.ndarray:
    """(N, 3) matrix of multiplied sub-scale totals, columns in ``factors`` order."""
    cols = []
    for f in factors:
        r, spec = responses[f], specs[f]
        cols.append(r.values.sum(axis=1) * spec.score_multiplier)
    return check_factor_scores(np.column_stack(cols).astype(np.float64))


def check_factor_scores(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"factor scores must have exactly 3 columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("factor scores must be finite")
    return x


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D vectors of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined for a constant vector")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def correlation_matrix(x, names=FACTORS) -> dict:
    x = check_factor_scores(x)
    return {(a, b): pearson(x[:, i], x[:, j])
            for i, a in enumerate(names) for j, b in enumerate(names) if i < j}


# ---------------------------------------------------------------- regression

@dataclass(frozen=True, eq=False)
class RegressionFit:
    target: str
    predictors: tuple
    intercept: float
    main: dict               # predictor -> coefficient
    interactions: dict       # "a*b" -> coefficient
    r_squared: float
    residuals: np.ndarray = field(repr=False)

    @property
    def coefficients(self) -> np.ndarray:
        """[intercept, main..., interactions...] in design-column order."""
        return np.array([self.intercept, *self.main.values(), *self.interactions.values()])

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "predictors": list(self.predictors),
            "intercept": self.intercept,
            "main": dict(self.main),
            "interactions": dict(self.interactions),
            "r_squared": self.r_squared,
            "n": int(len(self.residuals)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def interaction_design(predictors, names=("x1", "x2")):
    """Design matrix ``[1, x_j..., x_j*x_k for j<k]`` and its column names."""
    p = np.asarray(predictors, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    names = tuple(names)
    if len(names) != p.shape[1]:
        raise ValueError("one name per predictor column is required")
    cols = [np.ones(len(p))] + [p[:, j] for j in range(p.shape[1])]
    col_names = ["intercept", *names]
    for j in range(p.shape[1]):
        for k in range(j + 1, p.shape[1]):
            cols.append(p[:, j] * p[:, k])
            col_names.append(f"{names[j]}*{names[k]}")
    return np.column_stack(cols), col_names


def _collinear_columns(a: np.ndarray, names) -> list:
    """Names of columns that add no rank given the columns before them."""
    bad = []
    rank = 0
    for j in range(a.shape[1]):
        r = np.linalg.matrix_rank(a[:, : j + 1])
        if r == rank:
            bad.append(names[j])
        rank = r
    return bad


def ols_interactions(y, predictors, names=("x1", "x2"), target="y") -> RegressionFit:
    """Least squares of ``y`` on the predictors and their pairwise products."""
    y = np.asarray(y, dtype=np.float64)
    a, cols = interaction_design(predictors, names)
    if len(y) != a.shape[0]:
        raise ValueError("y and predictors differ in length")
    if a.shape[0] <= a.shape[1]:
        raise ValueError(f"need more than {a.shape[1]} observations, got {a.shape[0]}")
    if np.linalg.matrix_rank(a) < a.shape[1]:
        bad = _collinear_columns(a, cols)
        raise ValueError(f"rank-deficient design: column(s) {bad} are linear "
                         f"combinations of earlier columns in {cols}")
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    ss_res = float(resid @ resid)
    dev = y - y.mean()
    ss_tot = float(dev @ dev)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    k = len(names)
    return RegressionFit(
        target=target, predictors=tuple(names), intercept=float(coef[0]),
        main={n: float(c) for n, c in zip(names, coef[1:1 + k])},
        interactions={n: float(c) for n, c in zip(cols[1 + k:], coef[1 + k:])},
        r_squared=float(r2), residuals=resid,
    )


def factor_regressions(x, names=FACTORS) -> dict:
    """Each factor regressed on the other two and their product."""
    x = check_factor_scores(x)
    out = {}
    for i, t in enumerate(names):
        others = [j for j in range(3) if j != i]
        out[t] = ols_interactions(x[:, i], x[:, others], tuple(names[j] for j in others), t)
    return out


# ---------------------------------------------------------------- clustering

@dataclass(frozen=True, eq=False)
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    validity: dict
    restart: int = 0
    n_iter: int = 0
    inertia_history: tuple = ()

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "inertia": self.inertia,
            "validity": dict(self.validity),
            "centroids": self.centroids.tolist(),
            "cluster_sizes": np.bincount(self.assignments, minlength=self.k).tolist(),
            "restart": self.restart,
            "n_iter": self.n_iter,
            "assignments": self.assignments.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _sqdist(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _inertia(x, assign, centroids) -> float:
    return float(((x - centroids[assign]) ** 2).sum())


def _plus_plus(x, k, rng):
    """Greedy k-means++: each new centre is the best of a few D^2-weighted draws."""
    n = len(x)
    trials = 2 + int(np.log(k))
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with chosen centres.
            cand = rng.integers(n, size=trials)
        else:
            cand = rng.choice(n, size=trials, p=d2 / total)
        pots = [np.minimum(d2, ((x - x[c]) ** 2).sum(axis=1)) for c in cand]
        best = int(np.argmin([p.sum() for p in pots]))
        idx.append(int(cand[best]))
        d2 = pots[best]
    return x[idx].copy()


def _centroids(x, assign, k, old):
    c = old.copy()
    for j in range(k):
        members = assign == j
        if members.any():
            c[j] = x[members].mean(axis=0)
    return c


def _repair_empty(x, assign, centroids, k):
    """Give each empty cluster the point farthest from its current centroid."""
    for j in range(k):
        if (assign == j).any():
            continue
        sizes = np.bincount(assign, minlength=k)
        d2 = ((x - centroids[assign]) ** 2).sum(axis=1)
        d2[sizes[assign] <= 1] = -1.0  # never empty another cluster
        i = int(np.argmax(d2))
        assign[i] = j
        centroids[j] = x[i]
    return assign


def _lloyd(x, centroids, k, max_iter):
    history = []
    assign = np.argmin(_sqdist(x, centroids), axis=1)
    assign = _repair_empty(x, assign, centroids, k)
    it = 0
    for it in range(1, max_iter + 1):
        centroids = _centroids(x, assign, k, centroids)
        history.append(_inertia(x, assign, centroids))
        new = np.argmin(_sqdist(x, centroids), axis=1)
        new = _repair_empty(x, new, centroids, k)
        if np.array_equal(new, assign):
            break
        assign = new
    return assign, _centroids(x, assign, k, centroids), it, history


def _hartigan(x, assign, centroids, k):
    """Single-point transfers that strictly lower inertia, until none remain.

    Every Hartigan-stable partition is also a Lloyd fixed point, and many
    Lloyd fixed points are not Hartigan-stable.
    """
    assign = assign.copy()
    c = centroids.copy()
    sizes = np.bincount(assign, minlength=k).astype(np.float64)
    moved = True
    while moved:
        moved = False
        for i in range(len(x)):
            a = assign[i]
            if sizes[a] <= 1:
                continue
            d2 = ((c - x[i]) ** 2).sum(axis=1)
            cost_out = sizes[a] / (sizes[a] - 1) * d2[a]
            gain = sizes / (sizes + 1) * d2
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < cost_out * (1 - 1e-12):
                c[a] = (c[a] * sizes[a] - x[i]) / (sizes[a] - 1)
                c[b] = (c[b] * sizes[b] + x[i]) / (sizes[b] + 1)
                sizes[a] -= 1
                sizes[b] += 1
                assign[i] = b
                moved = True
    return assign


def kmeans(x, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> ClusterResult:
    """Lloyd's algorithm from k-means++ seeds, polished by single-point transfers.

    The lowest-inertia restart wins; ties go to the earlier restart.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    best = None
    for r in range(n_init):
        rng = np.random.Generator(np.random.PCG64([seed, r]))
        assign, cent, it, hist = _lloyd(x, _plus_plus(x, k, rng), k, max_iter)
        refined = _hartigan(x, assign, cent, k)
        if not np.array_equal(refined, assign):
            cent = _centroids(x, refined, k, cent)
            assign, cent, more, tail = _lloyd(x, cent, k, max_iter)
            it += more
            hist = hist + tail
        inertia = _inertia(x, assign, cent)
        if best is None or inertia < best[0]:
            best = (inertia, r, assign, cent, it, hist)
    inertia, r, assign, cent, it, hist = best
    validity = validity_indices(x, assign) if n > k else {
        "silhouette": 0.0, "davies_bouldin": 0.0, "calinski_harabasz": float("nan")}
    return ClusterResult(k, assign, cent, inertia, validity, r, it, tuple(hist))


def validity_indices(x, assignments) -> dict:
    """Silhouette (singletons score 0), Davies-Bouldin and Calinski-Harabasz."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels, a = np.unique(np.asarray(assignments), return_inverse=True)
    k = len(labels)
    n = len(x)
    if k < 2:
        raise ValueError("validity indices need at least 2 clusters")
    sizes = np.bincount(a, minlength=k)
    cent = np.stack([x[a == j].mean(axis=0) for j in range(k)])

    # silhouette: chunked to bound memory
    sil = np.zeros(n)
    for lo in range(0, n, 1024):
        d = np.sqrt(_sqdist(x[lo:lo + 1024], x))
        sums = np.stack([d[:, a == j].sum(axis=1) for j in range(k)], axis=1)
        own = a[lo:lo + 1024]
        rows = np.arange(len(own))
        own_n = sizes[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            intra = sums[rows, own] / (own_n - 1)
            other = sums / sizes[None, :]
        other[rows, own] = np.inf
        inter = other.min(axis=1)
        s = (inter - intra) / np.maximum(intra, inter)
        sil[lo:lo + 1024] = np.where(own_n > 1, s, 0.0)

    scatter = np.array([np.sqrt(((x[a == j] - cent[j]) ** 2).sum(axis=1)).mean()
                        for j in range(k)])
    sep = np.sqrt(_sqdist(cent, cent))
    db = 0.0
    for i in range(k):
        ratios = [(scatter[i] + scatter[j]) / sep[i, j] for j in range(k) if j != i]
        db += max(ratios)
    db /= k

    mean = x.mean(axis=0)
    between = float((sizes * ((cent - mean) ** 2).sum(axis=1)).sum())
    within = float(((x - cent[a]) ** 2).sum())
    if n == k:
        ch = float("nan")
    elif within == 0:
        ch = float("inf")
    else:
        ch = (between / (k - 1)) / (within / (n - k))
    return {"silhouette": float(sil.mean()), "davies_bouldin": float(db),
            "calinski_harabasz": float(ch)}


def cluster_order(result: ClusterResult) -> np.ndarray:
    """Cluster indices from lowest to highest mean centroid score.

    Equal means fall back to lexicographic centroid order.
    """
    c = result.centroids
    keys = [c[:, j] for j in range(c.shape[1] - 1, -1, -1)] + [c.mean(axis=1)]
    return np.lexsort(keys)


def cluster_labelset(result: ClusterResult, scheme) -> LabelSet:
    scheme = Scheme(scheme)
    order = cluster_order(result)
    rank = np.empty(result.k, dtype=np.int64)
    rank[order] = np.arange(result.k)
    r = rank[result.assignments]
    n = len(r)
    if scheme is Scheme.CLUSTER2:
        if result.k != 2:
            raise ValueError(f"Cluster2 needs k=2, got k={result.k}")
        return LabelSet(scheme, r, np.ones(n, dtype=bool))
    if scheme is Scheme.CLUSTER3_BINARY:
        if result.k != 3:
            raise ValueError(f"Cluster3Binary needs k=3, got k={result.k}")
        return LabelSet(scheme, (r == 2).astype(np.int64), r != 1)
    raise ValueError(f"cluster_labelset handles cluster schemes only, got {scheme.value}")
