"""Item-profile discrepancy within iso-score groups, and discrepancy-based filtering.

Subjects are grouped by raw total score.  Inside a group every subject's
standardized item profile is compared with the group's mean profile; the
distances ``d`` feed a per-group index (mean + population std of ``d``) and a
size-weighted average of that index across groups (the SDI).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .scales import ResponseMatrix, ScaleSpec, SeverityBand, bands_of, raw_totals


@dataclass(frozen=True, eq=False)
class ZMatrix:
    z: np.ndarray
    item_means: np.ndarray
    item_stds: np.ndarray


def _mean0(a):
    # Reducing sorted columns makes the result independent of row order; the
    # memory layout is fixed because numpy's summation order depends on it.
    return np.ascontiguousarray(np.sort(a, axis=0)).mean(axis=0)


def standardize(values) -> ZMatrix:
    """Column z-scores using population statistics; zero-variance columns become 0."""
    if isinstance(values, ResponseMatrix):
        values = values.values
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("standardize needs a non-empty 2-D matrix")
    mu = _mean0(a)
    sigma = np.sqrt(_mean0((a - mu) ** 2))  # ddof=0
    # Constant columns can pick up rounding noise in sigma; treat them as exact zeros.
    const = np.all(a == a[0], axis=0)
    sigma = np.where(const, 0.0, sigma)
    safe = np.where(sigma > 0, sigma, 1.0)
    z = np.where(sigma > 0, (a - mu) / safe, 0.0)
    return ZMatrix(z, mu, sigma)


def group_by_total(totals) -> dict:
    """Map each distinct total to the ascending list of subject indices holding it."""
    totals = np.asarray(totals)
    groups = {}
    for idx, t in enumerate(totals.tolist()):
        groups.setdefault(int(t), []).append(idx)
    return dict(sorted(groups.items()))


def group_discrepancy(z, members):
    """Distances of members' z-rows to their mean row, and the group index.

    Returns ``(d, gdi)`` with ``gdi = mean(d) + std(d)`` (population std).
    """
    if isinstance(z, ZMatrix):
        z = z.z
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise ValueError("group must be non-empty")
    # Offsets from the column minimum make identical rows give exact zeros; the
    # sorted reductions keep results bit-identical under row or item reordering.
    rows = z[members]
    rows = rows - rows.min(axis=0)
    dev = rows - _mean0(rows)
    d = np.sqrt(np.ascontiguousarray(np.sort(dev ** 2, axis=1)).sum(axis=1))
    ds = np.sort(d)
    m = ds.mean()
    return d, float(m + np.sqrt(np.sort((ds - m) ** 2).mean()))


def sdi(gdi: dict, sizes: dict) -> float:
    """Size-weighted mean of per-group indices, reduced in ascending key order."""
    keys = sorted(gdi)
    w = np.array([sizes[k] for k in keys], dtype=np.float64)
    g = np.array([gdi[k] for k in keys], dtype=np.float64)
    if w.sum() == 0:
        raise ValueError("no subjects")
    return float((w * g).sum() / w.sum())


@dataclass(frozen=True, eq=False)
class DiscrepancyReport:
    scale: str
    subject_ids: tuple
    totals: np.ndarray          # raw (unmultiplied) totals
    distances: np.ndarray       # d_j
    gdi: dict
    group_sizes: dict
    sdi: float
    band_sdi: dict = field(default_factory=dict)
    severity_grouped_sdi: float = float("nan")
    n_items: int = 1

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def sdi_per_sqrt_item(self) -> float:
        # Cross-scale comparison aid, not part of the index definition.
        return self.sdi / np.sqrt(self.n_items)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "n_subjects": self.n_subjects,
            "sdi": self.sdi,
            "sdi_per_sqrt_item": self.sdi_per_sqrt_item,
            "severity_grouped_sdi": self.severity_grouped_sdi,
            "band_sdi": {k: v for k, v in self.band_sdi.items()},
            "gdi": {str(k): v for k, v in self.gdi.items()},
            "group_sizes": {str(k): v for k, v in self.group_sizes.items()},
            "subjects": [
                {"subject_id": s, "total": int(t), "d": float(d)}
                for s, t, d in zip(self.subject_ids, self.totals, self.distances)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_csv(self, plan: "FilterPlan | None" = None) -> str:
        excluded = set(plan.excluded_ids) if plan is not None else set()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject_id", "total", "group_size", "d_j", "excluded_flag"])
        for s, t, d in zip(self.subject_ids, self.totals.tolist(), self.distances.tolist()):
            w.writerow([s, t, self.group_sizes[t], repr(float(d)), int(s in excluded)])
        return buf.getvalue()


def discrepancy_from_values(values, totals, subject_ids=None, scale="", bands=None):
    """Core pipeline on a bare matrix. ``bands`` (per-subject band codes) enables band summaries."""
    values = np.asarray(values)
    totals = np.asarray(totals, dtype=np.int64)
    n = values.shape[0]
    if subject_ids is None:
        subject_ids = tuple(str(i) for i in range(n))
    zm = standardize(values)
    groups = group_by_total(totals)
    d = np.zeros(n)
    gdi, sizes = {}, {}
    for t, members in groups.items():
        d_g, gdi[t] = group_discrepancy(zm.z, members)
        d[members] = d_g
        sizes[t] = len(members)
    band_sdi = {}
    sev_sdi = float("nan")
    if bands is not None:
        bands = np.asarray(bands)
        band_of_total = {t: int(bands[m[0]]) for t, m in groups.items()}
        sev_gdi, sev_sizes = {}, {}
        for b in SeverityBand:
            keys = [t for t in groups if band_of_total[t] == b]
            if keys:
                band_sdi[b.name] = sdi({k: gdi[k] for k in keys}, {k: sizes[k] for k in keys})
            members = np.flatnonzero(bands == b)
            if members.size:
                _, sev_gdi[int(b)] = group_discrepancy(zm.z, members)
                sev_sizes[int(b)] = members.size
        sev_sdi = sdi(sev_gdi, sev_sizes)
    return DiscrepancyReport(
        scale=scale, subject_ids=tuple(subject_ids), totals=totals, distances=d,
        gdi=gdi, group_sizes=sizes, sdi=sdi(gdi, sizes), band_sdi=band_sdi,
        severity_grouped_sdi=sev_sdi, n_items=values.shape[1],
    )


def analyze(r: ResponseMatrix, spec: ScaleSpec) -> DiscrepancyReport:
    raw = raw_totals(r, spec)
    bands = bands_of(raw * spec.score_multiplier, spec)
    return discrepancy_from_values(r.values, raw, r.subject_ids, spec.factor, bands)


@dataclass(frozen=True)
class FilterPlan:
    fraction: float
    excluded_ids: tuple
    retained_ids: tuple
    scale: str = ""

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.scale}|{self.fraction!r}|".encode())
        h.update("\x1f".join(self.excluded_ids).encode())
        return h.hexdigest()[:16]

    def retained_mask(self, subject_ids) -> np.ndarray:
        excluded = set(self.excluded_ids)
        return np.array([s not in excluded for s in subject_ids], dtype=bool)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "fraction": self.fraction,
            "n_excluded": len(self.excluded_ids),
            "n_retained": len(self.retained_ids),
            "digest": self.digest,
            "excluded_ids": list(self.excluded_ids),
            "retained_ids": list(self.retained_ids),
        }


def exclusion_count(q: float, n: int) -> int:
    if not 0.0 <= q < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {q}")
    # Guard against 0.1 * 8130 = 812.9999... style round-off.
    return int(np.floor(q * n + 1e-9))


def rank_top(scores, subject_ids, count: int) -> np.ndarray:
    """Indices of the ``count`` largest scores; ties go to the smaller subject id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(subject_ids, dtype=object)
    # lexsort: last key is primary.
    order = np.lexsort((ids.astype(str), -scores))
    return np.sort(order[:count])


def filter_top(report: DiscrepancyReport, q: float) -> FilterPlan:
    k = exclusion_count(q, report.n_subjects)
    top = rank_top(report.distances, report.subject_ids, k)
    mask = np.ones(report.n_subjects, dtype=bool)
    mask[top] = False
    ids = report.subject_ids
    return FilterPlan(
        fraction=float(q),
        excluded_ids=tuple(ids[i] for i in top),
        retained_ids=tuple(ids[i] for i in np.flatnonzero(mask)),
        scale=report.scale,
    )


def filter_iterative(r: ResponseMatrix, spec: ScaleSpec, q: float, step: float = 0.05) -> FilterPlan:
    """Remove subjects in rounds of ``step`` (as a fraction of the full cohort),
    re-running the whole analysis on the survivors between rounds."""
    n = r.n_subjects
    target = exclusion_count(q, n)
    excluded = []
    current = r
    done = 0.0
    while len(excluded) < target:
        done = min(done + step, q)
        k = min(exclusion_count(done, n), target) - len(excluded)
        if k <= 0:
            continue
        rep = analyze(current, spec)
        top = rank_top(rep.distances, rep.subject_ids, k)
        excluded.extend(rep.subject_ids[i] for i in top)
        keep = np.setdiff1d(np.arange(current.n_subjects), top)
        current = current.subset(keep)
    ex = set(excluded)
    order = {s: i for i, s in enumerate(r.subject_ids)}
    return FilterPlan(
        fraction=float(q),
        excluded_ids=tuple(sorted(ex, key=order.__getitem__)),
        retained_ids=tuple(s for s in r.subject_ids if s not in ex),
        scale=spec.factor,
    )


DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(9))


def sdi_sweep(r: ResponseMatrix, spec: ScaleSpec, fractions=DEFAULT_FRACTIONS,
              iterative: bool = False) -> list:
    """SDI recomputed on the retained subset for each exclusion fraction."""
    fractions = [float(q) for q in fractions]
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be ascending")
    base = analyze(r, spec)
    out = []
    for q in fractions:
        if iterative:
            plan = filter_iterative(r, spec, q)
        else:
            plan = filter_top(base, q)
        keep = np.flatnonzero(plan.retained_mask(r.subject_ids))
        out.append((q, analyze(r.subset(keep), spec).sdi))
    return out
