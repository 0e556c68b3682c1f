"""Desk-scale learners: L2 logistic regression, ridge regression, CART random forests."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

KINDS = ("logreg", "ridge", "random_forest_cls", "random_forest_reg")

_DEFAULTS = {
    "logreg": {"learning_rate": 0.5, "l2": 1e-3, "epochs": 500, "tol": 1e-7},
    "ridge": {"l2": 1.0},
    "random_forest_cls": {"n_trees": 100, "max_depth": 10, "min_samples_split": 5,
                          "max_features": "sqrt", "bootstrap": True},
    "random_forest_reg": {"n_trees": 100, "max_depth": 10, "min_samples_split": 5,
                          "max_features": "third", "bootstrap": True},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {KINDS}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")
        p = self.hyper
        for name in ("learning_rate", "epochs", "n_trees", "min_samples_split"):
            if name in p and not p[name] > 0:
                raise ValueError(f"{name} must be positive")
        if p.get("l2", 0) < 0:
            raise ValueError("l2 must be non-negative")
        if p.get("max_depth") is not None and p["max_depth"] < 0:
            raise ValueError("max_depth must be non-negative")

    @property
    def hyper(self) -> dict:
        return {**_DEFAULTS[self.kind], **self.params}

    @property
    def is_classifier(self) -> bool:
        return self.kind in ("logreg", "random_forest_cls")

    @property
    def label(self) -> str:
        return {"logreg": "LR", "ridge": "Ridge", "random_forest_cls": "RF",
                "random_forest_reg": "RF"}[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.hyper, "seed": self.seed}


class _Scaler:
    def __init__(self, x):
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def __call__(self, x):
        return (x - self.mean) / self.scale


def _as_2d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    return x


# ---------------------------------------------------------------- logistic regression

def log_loss_grad(params, x, y, l2):
    """Mean cross-entropy plus ``l2/2 * ||w||^2`` and its gradient.

    ``params`` is ``[w_1..w_d, b]``; the intercept is not penalized.
    """
    w, b = params[:-1], params[-1]
    t = x @ w + b
    # log(1 + exp(t)) - y t, written to stay finite for large |t|
    loss = np.mean(np.logaddexp(0.0, t) - y * t) + 0.5 * l2 * (w @ w)
    p = np.exp(-np.logaddexp(0.0, -t))
    r = (p - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = x.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coef: np.ndarray
    intercept: float
    scaler: _Scaler
    converged: bool
    epochs_run: int
    loss_history: np.ndarray

    def decision_function(self, x):
        return self.scaler(_as_2d(x)) @ self.coef + self.intercept

    def predict_proba(self, x):
        return np.exp(-np.logaddexp(0.0, -self.decision_function(x)))

    def predict(self, x):
        return (self.predict_proba(x) >= 0.5).astype(np.int64)


def train_logreg(x, y, spec: ModelSpec | None = None) -> LogisticModel:
    spec = spec or ModelSpec("logreg")
    h = spec.hyper
    x = _as_2d(x)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes in y")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    scaler = _Scaler(x)
    xs = scaler(x)
    params = np.zeros(xs.shape[1] + 1)
    l2 = h["l2"]
    # Cap the step at 1/L (L bounds the loss curvature) so descent is monotone
    # even when features are strongly collinear.
    ones = np.hstack([xs, np.ones((len(y), 1))])
    lipschitz = np.linalg.norm(ones, 2) ** 2 / (4 * len(y)) + l2
    lr = min(h["learning_rate"], 1.0 / lipschitz)
    history = []
    converged = False
    epoch = 0
    for epoch in range(1, int(h["epochs"]) + 1):
        loss, grad = log_loss_grad(params, xs, y, l2)
        history.append(loss)
        if epoch > 1 and history[-2] - loss < h["tol"]:
            converged = True
            break
        params -= lr * grad
    return LogisticModel(params[:-1].copy(), float(params[-1]), scaler, converged,
                         epoch, np.array(history))


def predict_proba(model, x):
    return model.predict_proba(x)


# ---------------------------------------------------------------- ridge

@dataclass(frozen=True, eq=False)
class RidgeModel:
    coef: np.ndarray
    intercept: float
    scaler: _Scaler

    def predict(self, x):
        return self.scaler(_as_2d(x)) @ self.coef + self.intercept


def train_ridge(x, y, spec: ModelSpec | None = None) -> RidgeModel:
    spec = spec or ModelSpec("ridge")
    x = _as_2d(x)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty training set")
    scaler = _Scaler(x)
    xs = scaler(x)
    ym = y.mean()
    a = xs.T @ xs + spec.hyper["l2"] * np.eye(xs.shape[1])
    coef = np.linalg.solve(a, xs.T @ (y - ym))
    return RidgeModel(coef, float(ym), scaler)


# ---------------------------------------------------------------- CART trees

MAX_BINS = 64


def bin_features(x, max_bins: int = MAX_BINS):
    """Quantize each column into at most ``max_bins`` ordered bins.

    Returns ``(codes, thresholds)``: ``codes`` is (d, n) uint8, column-major for
    the split scan; ``thresholds[f, b]`` separates bin ``b`` from ``b + 1`` and lies
    midway between the largest training value of the one and the smallest of the
    other. Columns with at most ``max_bins`` distinct values are binned exactly.
    """
    n, d = x.shape
    codes = np.empty((d, n), dtype=np.uint8)
    thresholds = np.full((d, max_bins), np.inf)
    for f in range(d):
        col = x[:, f]
        distinct = np.unique(col)
        if len(distinct) <= max_bins:
            upper = distinct
        else:
            qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
            upper = np.unique(np.append(qs, distinct[-1]))
        code = np.searchsorted(upper, col, side="left")
        codes[f] = code
        nb = len(upper)
        for b in range(nb - 1):
            hi = upper[b]
            lo = distinct[np.searchsorted(distinct, hi, side="right")]
            t = 0.5 * (hi + lo)
            thresholds[f, b] = t if t < lo else hi
    return codes, thresholds


@numba.njit(cache=True)
def _best_split(codes, y, idx, features, classify, n_bins):
    """Best (feature, bin, impurity) for rows ``idx`` scanning bin boundaries.

    Impurity is the size-weighted child Gini (classification, binary y) or the
    summed child SSE (regression). Ties keep the first candidate in feature
    order, then boundary order.
    """
    n = idx.shape[0]
    best_f = -1
    best_b = -1
    best_imp = np.inf
    cnt = np.zeros(n_bins)
    sm = np.zeros(n_bins)
    sq = np.zeros(n_bins)
    for f in features:
        cnt[:] = 0.0
        sm[:] = 0.0
        sq[:] = 0.0
        for i in range(n):
            b = codes[f, idx[i]]
            v = y[idx[i]]
            cnt[b] += 1.0
            sm[b] += v
            sq[b] += v * v
        tot = sm.sum()
        tot2 = sq.sum()
        nl = 0.0
        left = 0.0
        left2 = 0.0
        for b in range(n_bins - 1):
            if cnt[b] == 0.0:
                continue
            nl += cnt[b]
            left += sm[b]
            left2 += sq[b]
            nr = n - nl
            if nr == 0.0:
                break
            right = tot - left
            if classify:
                pl = left / nl
                pr = right / nr
                imp = nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)
            else:
                imp = (left2 - left * left / nl) + ((tot2 - left2) - right * right / nr)
            if imp < best_imp - 1e-12:
                best_imp = imp
                best_f = f
                best_b = b
    return best_f, best_b, best_imp


@numba.njit(cache=True)
def _grow_tree(codes, thresholds, y, sample, classify, max_depth, min_split,
               max_features, seed):
    np.random.seed(seed)
    d = codes.shape[0]
    n_bins = thresholds.shape[1]
    cap = 2 * sample.shape[0] + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    buf = sample.copy()
    tmp = np.empty_like(buf)
    # Explicit stack of (node, start, end, depth) ranges over ``buf``.
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_dep = np.empty(cap, dtype=np.int64)
    perm = np.arange(d)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = buf.shape[0]
    st_dep[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        dep = st_dep[top]
        n = hi - lo
        s = 0.0
        pure = True
        y0 = y[buf[lo]]
        for i in range(lo, hi):
            s += y[buf[i]]
            if y[buf[i]] != y0:
                pure = False
        value[node] = s / n
        if pure or n < min_split or dep >= max_depth:
            continue
        if max_features >= d:
            features = perm
        else:
            for i in range(max_features):
                j = i + np.random.randint(d - i)
                t = perm[i]
                perm[i] = perm[j]
                perm[j] = t
            features = perm[:max_features].copy()
        f, b, _ = _best_split(codes, y, buf[lo:hi], features, classify, n_bins)
        if f < 0:
            continue
        k = lo
        m = 0
        for i in range(lo, hi):
            r = buf[i]
            if codes[f, r] <= b:
                buf[k] = r
                k += 1
            else:
                tmp[m] = r
                m += 1
        for i in range(m):
            buf[k + i] = tmp[i]
        feat[node] = f
        thr[node] = thresholds[f, b]
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_lo[top] = k
        st_hi[top] = hi
        st_dep[top] = dep + 1
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = k
        st_dep[top] = dep + 1
        top += 1
        n_nodes += 2
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _apply_tree(x, feat, thr, left, right, value):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        node = 0
        while feat[node] >= 0:
            if x[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict_value(self, x):
        return _apply_tree(np.ascontiguousarray(x, dtype=np.float64), self.feature,
                           self.threshold, self.left, self.right, self.value)


def fit_tree(x, y, classify=True, max_depth=None, min_samples_split=2, max_features=None,
             sample=None, seed=0, binned=None) -> Tree:
    """Grow one CART tree on rows ``sample`` (default: all rows, once each)."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty training set")
    if binned is None:
        binned = bin_features(_as_2d(x))
    codes, thresholds = binned
    if sample is None:
        sample = np.arange(len(y))
    d = codes.shape[0]
    mf = d if max_features is None else int(max_features)
    depth = np.iinfo(np.int64).max if max_depth is None else int(max_depth)
    parts = _grow_tree(codes, thresholds, y, np.asarray(sample, dtype=np.int64), classify,
                       depth, int(min_samples_split), max(1, min(mf, d)), int(seed))
    return Tree(*parts)


def _resolve_max_features(rule, d, classify):
    if rule in (None, "all"):
        return d
    if rule == "sqrt":
        return max(1, int(np.sqrt(d)))
    if rule == "third":
        return max(1, d // 3)
    if rule == "log2":
        return max(1, int(np.log2(d)))
    if isinstance(rule, float):
        return max(1, int(rule * d))
    return int(rule)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    classify: bool

    def _stack(self, x):
        x = np.ascontiguousarray(_as_2d(x))
        return np.stack([t.predict_value(x) for t in self.trees])

    def predict_proba(self, x):
        """Mean leaf positive-class fraction (classification)."""
        return self._stack(x).mean(axis=0)

    def predict(self, x):
        vals = self._stack(x)
        if not self.classify:
            return vals.mean(axis=0)
        votes = (vals > 0.5).sum(axis=0) + 0.5 * (vals == 0.5).sum(axis=0)
        n = len(self.trees)
        # Tied votes fall back to the mean leaf probability.
        return np.where(2 * votes == n, vals.mean(axis=0) >= 0.5, 2 * votes > n).astype(np.int64)


def train_forest(x, y, spec: ModelSpec | None = None) -> ForestModel:
    spec = spec or ModelSpec("random_forest_cls")
    classify = spec.kind == "random_forest_cls"
    h = spec.hyper
    x = np.ascontiguousarray(_as_2d(x))
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    mf = _resolve_max_features(h["max_features"], x.shape[1], classify)
    binned = bin_features(x)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    trees = []
    for _ in range(int(h["n_trees"])):
        sample = rng.integers(0, n, size=n) if h["bootstrap"] else np.arange(n)
        tree_seed = int(rng.integers(2**31 - 1))
        trees.append(fit_tree(None, y, classify, h["max_depth"], h["min_samples_split"],
                              mf, sample, tree_seed, binned))
    return ForestModel(tuple(trees), classify)


def train(x, y, spec: ModelSpec):
    if spec.kind == "logreg":
        return train_logreg(x, y, spec)
    if spec.kind == "ridge":
        return train_ridge(x, y, spec)
    return train_forest(x, y, spec)


def scores_of(model, x):
    """Continuous ranking scores for AUC."""
    if isinstance(model, LogisticModel):
        return model.decision_function(x)
    return model.predict_proba(x)
