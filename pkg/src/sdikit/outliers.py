"""Feature-space outlier scores: isolation forest and local outlier factor."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .heterogeneity import exclusion_count, rank_top

EULER_GAMMA = 0.5772156649


def harmonic(i: float) -> float:
    return math.log(i) + EULER_GAMMA


def average_path_length(n: int) -> float:
    """c(n): mean unsuccessful-search path length of a binary search tree on n keys."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


def isolation_score(expected_path: float, n: int) -> float:
    return float(2.0 ** (-expected_path / average_path_length(n)))


@dataclass(frozen=True, eq=False)
class OutlierScores:
    method: str
    subject_ids: tuple
    scores: np.ndarray
    contamination: float
    flagged_ids: tuple

    @property
    def flagged_mask(self) -> np.ndarray:
        flagged = set(self.flagged_ids)
        return np.array([s in flagged for s in self.subject_ids], dtype=bool)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject_id", "score", "flagged"])
        for s, v, f in zip(self.subject_ids, self.scores.tolist(), self.flagged_mask.tolist()):
            w.writerow([s, repr(float(v)), int(f)])
        return buf.getvalue()


def flag_top(method, scores, subject_ids, contamination) -> OutlierScores:
    """Flag floor(contamination * N) highest scores; ties go to the smaller id."""
    if not 0.0 < contamination < 1.0:
        raise ValueError(f"contamination must lie in (0, 1), got {contamination}")
    scores = np.asarray(scores, dtype=np.float64)
    ids = tuple(str(s) for s in subject_ids)
    top = rank_top(scores, ids, exclusion_count(contamination, len(ids)))
    return OutlierScores(method, ids, scores, float(contamination), tuple(ids[i] for i in top))


def _ids(n, subject_ids):
    return tuple(str(i) for i in range(n)) if subject_ids is None else tuple(subject_ids)


# ---------------------------------------------------------------- isolation forest

@dataclass(frozen=True, eq=False)
class IsolationTree:
    feature: np.ndarray     # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray        # training points reaching the node
    depth: np.ndarray

    def path_length(self, x) -> np.ndarray:
        """Depth of the reached leaf plus c(leaf size) for every row of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        node = np.zeros(len(x), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        leaf_c = np.array([average_path_length(int(s)) for s in self.size])
        return self.depth[node] + leaf_c[node]


def grow_isolation_tree(x, rng: np.random.Generator, height_limit: int) -> IsolationTree:
    """Random axis-aligned splits until points are isolated or the height limit is hit.

    Split features are drawn among those not constant in the node; the
    threshold is uniform between the node's minimum and maximum.
    """
    x = np.asarray(x, dtype=np.float64)
    feat, thr, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        for lst, v in ((feat, -1), (thr, 0.0), (left, -1), (right, -1), (size, n), (depth, d)):
            lst.append(v)
        return len(feat) - 1

    stack = [(new_node(len(x), 0), np.arange(len(x)), 0)]
    while stack:
        node, rows, d = stack.pop()
        if len(rows) <= 1 or d >= height_limit:
            continue
        sub = x[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        usable = np.flatnonzero(hi > lo)
        if usable.size == 0:
            continue
        f = int(usable[rng.integers(usable.size)])
        t = float(rng.uniform(lo[f], hi[f]))
        if t <= lo[f]:
            # uniform() can return the lower bound; keep both children non-empty
            t = float(np.nextafter(lo[f], hi[f]))
        mask = sub[:, f] < t
        feat[node], thr[node] = f, t
        lnode = new_node(int(mask.sum()), d + 1)
        rnode = new_node(int((~mask).sum()), d + 1)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, rows[~mask], d + 1))
        stack.append((lnode, rows[mask], d + 1))
    return IsolationTree(*(np.array(v) for v in (feat, thr, left, right, size, depth)))


def isolation_forest(x, n_trees: int = 100, subsample_size: int = 256, seed: int = 0,
                     contamination: float = 0.1, subject_ids=None) -> OutlierScores:
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("isolation forest needs at least 2 points")
    psi = min(subsample_size, n)
    height = int(math.ceil(math.log2(psi)))
    rng = np.random.Generator(np.random.PCG64(seed))
    total = np.zeros(n)
    for _ in range(n_trees):
        rows = np.sort(rng.choice(n, size=psi, replace=False))
        tree = grow_isolation_tree(x[rows], rng, height)
        total += tree.path_length(x)
    scores = 2.0 ** (-(total / n_trees) / average_path_length(psi))
    return flag_top("iforest", scores, _ids(n, subject_ids), contamination)


def expected_path_length(point, data, height_limit: int) -> float:
    """Exact expected isolation path length of ``point`` over random trees grown on ``data``.

    Averages over the split feature (uniform among non-constant features) and
    the split position, integrated gap by gap between sorted node values.
    """
    point = np.asarray(point, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)

    def rec(rows, d):
        if len(rows) <= 1 or d >= height_limit:
            return d + average_path_length(len(rows))
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        usable = np.flatnonzero(hi > lo)
        if usable.size == 0:
            return d + average_path_length(len(rows))
        acc = 0.0
        for f in usable:
            v = np.unique(rows[:, f])
            width = hi[f] - lo[f]
            for a, b in zip(v[:-1], v[1:]):
                # every threshold in (a, b] sends the same rows left
                side = rows[:, f] < b if point[f] < b else rows[:, f] >= b
                acc += (b - a) / width * rec(rows[side], d + 1)
        return acc / usable.size

    return float(rec(data, 0))


# ---------------------------------------------------------------- LOF

def _neighbourhoods(x, k):
    """Per point: k-distance and indices of all other points within it (ties included)."""
    n = len(x)
    kdist = np.empty(n)
    hoods = []
    for lo in range(0, n, 512):
        d = cdist(x[lo:lo + 512], x)
        for r in range(len(d)):
            i = lo + r
            row = d[r]
            row[i] = np.inf
            kd = np.partition(row, k - 1)[k - 1]
            kdist[i] = kd
            hoods.append(np.flatnonzero(row <= kd))
    return kdist, hoods


def lof(x, k_neighbors: int = 20, contamination: float = 0.1, subject_ids=None) -> OutlierScores:
    """Local outlier factor with tie-inclusive k-neighbourhoods.

    A point whose neighbours all coincide with it has infinite local
    reachability density; such points score 1 against equally dense
    neighbours.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if not 1 <= k_neighbors < n:
        raise ValueError(f"need 1 <= k_neighbors < N, got k={k_neighbors}, N={n}")
    kdist, hoods = _neighbourhoods(x, k_neighbors)
    lrd = np.empty(n)
    for i, nb in enumerate(hoods):
        dist = np.sqrt(((x[nb] - x[i]) ** 2).sum(axis=1))
        reach = np.maximum(kdist[nb], dist).mean()
        lrd[i] = np.inf if reach == 0 else 1.0 / reach
    scores = np.empty(n)
    for i, nb in enumerate(hoods):
        if np.isinf(lrd[i]):
            scores[i] = float(np.mean(np.isinf(lrd[nb])))
        else:
            scores[i] = float(np.mean(lrd[nb] / lrd[i]))
    return flag_top("lof", scores, _ids(n, subject_ids), contamination)
