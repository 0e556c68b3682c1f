"""Experiment runners: filtering grids, excluded-sample validation, regression
sweeps, subgroup splits and the outlier-method comparison."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._version import TOOL, __version__
from .analytics import cluster_labelset, factor_scores, kmeans
from .heterogeneity import FilterPlan, analyze, filter_iterative, filter_top
from .metrics import (CLASSIFICATION_KEYS, REGRESSION_KEYS, Metrics, balanced_accuracy,
                      classification_metrics, crossval, downsample_balance)
from .models import ModelSpec, scores_of, train
from .outliers import isolation_forest, lof
from .scales import FACTORS, Scheme, bands_of, binarize, raw_totals

CLUSTER = "cluster"
DEFAULT_Q = (0.0, 0.1)


def default_classifiers(seed: int = 0) -> tuple:
    return (ModelSpec("logreg", seed=seed), ModelSpec("random_forest_cls", seed=seed))


def default_regressors(seed: int = 0) -> tuple:
    return (ModelSpec("ridge", seed=seed), ModelSpec("random_forest_reg", seed=seed))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


@dataclass(eq=False)
class ExperimentReport:
    """Grid of result rows plus a provenance block.

    Rows are flat dicts; ``columns`` fixes the CSV column order.
    """
    kind: str
    columns: tuple
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    def select(self, **match) -> list:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def cell(self, **match) -> dict:
        found = self.select(**match)
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {match}")
        return found[0]

    @property
    def failed(self) -> list:
        return [r for r in self.rows if str(r.get("status", "ok")).startswith("failed")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.provenance.items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "provenance": self.provenance,
                "columns": list(self.columns), "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _metric_columns(keys):
    return tuple(c for k in keys for c in (k, f"{k}_std"))


def _metric_fields(m: Metrics, keys) -> dict:
    out = {}
    for k in keys:
        out[k] = float(m.mean.get(k, float("nan")))
        out[f"{k}_std"] = float(m.std.get(k, float("nan")))
    return out


def _provenance(cohort, seed, **extra) -> dict:
    p = {"tool": TOOL, "version": __version__, "seed": seed,
         "config_hash": cohort.config_hash, "n_subjects": cohort.n_subjects}
    p.update(extra)
    return p


# ---------------------------------------------------------------- labels and plans

def cohort_plans(cohort, q: float, iterative: bool = False, factors=None) -> dict:
    """Per-factor FilterPlan at exclusion fraction ``q``."""
    plans = {}
    for f in factors or cohort.responses:
        r, spec = cohort.responses[f], cohort.specs[f]
        plans[f] = filter_iterative(r, spec, q) if iterative else filter_top(analyze(r, spec), q)
    return plans


def retained_mask(cohort, target, plans) -> np.ndarray:
    """Rows kept for ``target``; the cluster target drops anyone excluded on any factor."""
    ids = cohort.subject_ids
    if target == CLUSTER:
        keep = np.ones(len(ids), dtype=bool)
        for p in plans.values():
            keep &= p.retained_mask(ids)
        return keep
    return plans[target].retained_mask(ids)


def _cluster_scheme(scheme: Scheme) -> Scheme:
    return {Scheme.BC: Scheme.CLUSTER2, Scheme.RBC: Scheme.CLUSTER3_BINARY}.get(scheme, scheme)


def target_labels(cohort, target, scheme, seed: int = 0, _clusters=None):
    """LabelSet for a factor under BC/RBC, or for the cluster target.

    For the cluster target BC means the two-cluster solution and RBC the
    three-cluster solution with its middle cluster dropped.
    """
    scheme = Scheme(scheme)
    if target == CLUSTER:
        scheme = _cluster_scheme(scheme)
        k = 2 if scheme is Scheme.CLUSTER2 else 3
        if _clusters is not None and k in _clusters:
            res = _clusters[k]
        else:
            res = kmeans(factor_scores(cohort.responses, cohort.specs), k, seed)
        return cluster_labelset(res, scheme)
    if scheme in (Scheme.CLUSTER2, Scheme.CLUSTER3_BINARY):
        raise ValueError(f"scheme {scheme.value} applies to the cluster target only")
    spec = cohort.specs[target]
    scores = raw_totals(cohort.responses[target], spec) * spec.score_multiplier
    return binarize(bands_of(scores, spec), scheme)


def _cluster_cache(cohort, targets, schemes, seed):
    if CLUSTER not in targets:
        return None
    ks = {2 if _cluster_scheme(Scheme(s)) is Scheme.CLUSTER2 else 3 for s in schemes}
    x = factor_scores(cohort.responses, cohort.specs)
    return {k: kmeans(x, k, seed) for k in sorted(ks)}


# ---------------------------------------------------------------- runners

GRID_COLUMNS = ("model", "factor", "scheme", "q", "status", "n", "n_positive") \
    + _metric_columns(CLASSIFICATION_KEYS)


def threshold_experiment(cohort, factors=FACTORS, schemes=("RBC",), q_list=DEFAULT_Q,
                         model_specs=None, k_folds: int = 5, seed: int | None = None,
                         balance: bool = False, iterative: bool = False,
                         timing: bool = False) -> ExperimentReport:
    """Cross-validated classification for every (factor, scheme, q, model) cell.

    Filtering happens before fold assignment.  ``balance`` down-samples the
    majority class inside training folds.
    """
    t0 = time.perf_counter()
    seed = _default_seed(cohort, seed)
    model_specs = tuple(model_specs or default_classifiers(seed))
    q_list = [float(q) for q in q_list]
    clusters = _cluster_cache(cohort, factors, schemes, seed)
    plan_digests = {}
    report = ExperimentReport("classification", GRID_COLUMNS)
    for q in q_list:
        plans = cohort_plans(cohort, q, iterative)
        plan_digests.update({f"{f}@{q!r}": p.digest for f, p in plans.items()})
        for target in factors:
            keep = retained_mask(cohort, target, plans)
            for scheme in schemes:
                scheme_v = Scheme(scheme).value
                try:
                    labels = target_labels(cohort, target, scheme, seed, clusters)
                    rows = np.flatnonzero(keep & labels.retained)
                    y = labels.labels[rows]
                except Exception as exc:  # noqa: BLE001 - recorded in the grid
                    for spec in model_specs:
                        report.add(model=spec.kind, factor=target, scheme=scheme_v, q=q,
                                   status=f"failed: {exc}")
                    continue
                for spec in model_specs:
                    row = dict(model=spec.kind, factor=target, scheme=scheme_v, q=q,
                               n=int(len(rows)), n_positive=int(y.sum()))
                    try:
                        m = crossval(cohort.features[rows], y, spec, k_folds, seed, balance)
                        row.update(status="ok", **_metric_fields(m, CLASSIFICATION_KEYS))
                    except Exception as exc:  # noqa: BLE001
                        row["status"] = f"failed: {exc}"
                    report.add(**row)
    report.provenance = _provenance(
        cohort, seed, k_folds=k_folds, balance=balance, iterative=iterative,
        models=[s.to_dict() for s in model_specs], filter_plans=plan_digests,
        std="population std over folds")
    if timing:
        report.provenance["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    return report


REGRESSION_COLUMNS = ("model", "factor", "q", "status", "n") + _metric_columns(REGRESSION_KEYS)


def regression_experiment(cohort, factors=FACTORS, q_list=DEFAULT_Q, model_specs=None,
                          k_folds: int = 5, seed: int | None = None, iterative: bool = False,
                          timing: bool = False) -> ExperimentReport:
    """Cross-validated prediction of multiplied factor totals from features."""
    t0 = time.perf_counter()
    seed = _default_seed(cohort, seed)
    model_specs = tuple(model_specs or default_regressors(seed))
    report = ExperimentReport("regression", REGRESSION_COLUMNS)
    plan_digests = {}
    for q in [float(q) for q in q_list]:
        plans = cohort_plans(cohort, q, iterative, factors)
        plan_digests.update({f"{f}@{q!r}": p.digest for f, p in plans.items()})
        for f in factors:
            spec = cohort.specs[f]
            y = (raw_totals(cohort.responses[f], spec) * spec.score_multiplier).astype(float)
            rows = np.flatnonzero(plans[f].retained_mask(cohort.subject_ids))
            for ms in model_specs:
                row = dict(model=ms.kind, factor=f, q=q, n=int(len(rows)))
                try:
                    m = crossval(cohort.features[rows], y[rows], ms, k_folds, seed)
                    row.update(status="ok", **_metric_fields(m, REGRESSION_KEYS))
                except Exception as exc:  # noqa: BLE001
                    row["status"] = f"failed: {exc}"
                report.add(**row)
    report.provenance = _provenance(
        cohort, seed, k_folds=k_folds, iterative=iterative,
        models=[s.to_dict() for s in model_specs], filter_plans=plan_digests)
    if timing:
        report.provenance["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    return report


def excluded_validation(cohort, factor, q: float = 0.1, model_spec: ModelSpec | None = None,
                        scheme="BC", seed: int | None = None, plan: FilterPlan | None = None):
    """Train on retained subjects, test on the excluded ones; both sides class-balanced.

    Returns ``(metrics, train_size, test_size)``.  Raises ``ValueError`` when
    either side lacks a class.
    """
    if not q > 0:
        raise ValueError("excluded validation needs q > 0")
    seed = _default_seed(cohort, seed)
    model_spec = model_spec or ModelSpec("random_forest_cls", seed=seed)
    if plan is None:
        plan = cohort_plans(cohort, q, factors=[factor] if factor != CLUSTER else None)
        keep = retained_mask(cohort, factor, plan)
    else:
        keep = plan.retained_mask(cohort.subject_ids)
    labels = target_labels(cohort, factor, scheme, seed)
    rng = np.random.Generator(np.random.PCG64([seed, 2]))
    tr = np.flatnonzero(keep & labels.retained)
    te = np.flatnonzero(~keep & labels.retained)
    for name, idx in (("retained", tr), ("excluded", te)):
        if len(np.unique(labels.labels[idx])) < 2:
            raise ValueError(f"{name} set of {factor!r} holds a single class")
    tr = tr[downsample_balance(labels.labels[tr], rng)]
    te = te[downsample_balance(labels.labels[te], rng)]
    model = train(cohort.features[tr], labels.labels[tr], model_spec)
    y_te = labels.labels[te]
    pred = model.predict(cohort.features[te])
    m = classification_metrics(y_te, pred, scores_of(model, cohort.features[te]))
    mean = dict(m.mean, balanced_accuracy=balanced_accuracy(y_te, pred))
    return Metrics(mean, {k: 0.0 for k in mean}), int(len(tr)), int(len(te))


EXCLUDED_COLUMNS = ("model", "factor", "scheme", "q", "status", "train_size", "test_size",
                    "accuracy", "precision", "recall", "f1", "balanced_accuracy")


def excluded_validation_report(cohort, factors=FACTORS, q: float = 0.1, model_spec=None,
                               scheme="BC", seed: int | None = None,
                               timing: bool = False) -> ExperimentReport:
    t0 = time.perf_counter()
    seed = _default_seed(cohort, seed)
    model_spec = model_spec or ModelSpec("random_forest_cls", seed=seed)
    report = ExperimentReport("excluded_validation", EXCLUDED_COLUMNS)
    plans = cohort_plans(cohort, q)
    for f in factors:
        row = dict(model=model_spec.kind, factor=f, scheme=Scheme(scheme).value, q=float(q))
        try:
            plan = None if f == CLUSTER else plans[f]
            m, n_tr, n_te = excluded_validation(cohort, f, q, model_spec, scheme, seed, plan)
            row.update(status="ok", train_size=n_tr, test_size=n_te,
                       **{k: m[k] for k in EXCLUDED_COLUMNS[7:]})
        except Exception as exc:  # noqa: BLE001
            row["status"] = f"failed: {exc}"
        report.add(**row)
    report.provenance = _provenance(
        cohort, seed, model=model_spec.to_dict(), balance="train and test down-sampled",
        filter_plans={f"{f}@{float(q)!r}": p.digest for f, p in plans.items()})
    if timing:
        report.provenance["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    return report


def subgroup_metrics(cohort, grouping, experiment="threshold", min_size: int = 50,
                     **kwargs) -> ExperimentReport:
    """Run one experiment separately inside each subgroup and stack the grids.

    Filtering plans are recomputed within each subgroup.  Subgroups smaller
    than ``min_size`` get a single ``skipped`` row and a warning.
    """
    runners = {"threshold": threshold_experiment, "regression": regression_experiment}
    if experiment not in runners:
        raise ValueError(f"experiment must be one of {sorted(runners)}")
    grouping = np.asarray(grouping)
    if len(grouping) != cohort.n_subjects:
        raise ValueError("grouping needs one value per subject")
    runner = runners[experiment]
    columns = ("subgroup", "subgroup_size") + (GRID_COLUMNS if experiment == "threshold"
                                               else REGRESSION_COLUMNS)
    report = ExperimentReport(f"subgroup_{experiment}", columns)
    provenance = {}
    for g in sorted(np.unique(grouping).tolist(), key=str):
        rows = np.flatnonzero(grouping == g)
        if len(rows) < min_size:
            warnings.warn(f"subgroup {g!r} has {len(rows)} subjects (< {min_size}); skipped")
            report.add(subgroup=str(g), subgroup_size=int(len(rows)),
                       status=f"skipped: fewer than {min_size} subjects")
            continue
        sub = runner(cohort.subset(rows), **kwargs)
        provenance[str(g)] = sub.provenance
        for r in sub.rows:
            report.add(subgroup=str(g), subgroup_size=int(len(rows)), **r)
    report.provenance = {"tool": TOOL, "version": __version__, "min_size": min_size,
                         "subgroups": provenance}
    return report


OUTLIER_COLUMNS = ("method", "factor", "status", "n_removed", "n_class", "n_reg",
                   "accuracy", "precision", "recall", "f1", "mae", "rmse")
NOT_IMPLEMENTED = ("ocsvm",)


def compare_outlier_methods(cohort, factors=FACTORS, cls_spec=None, reg_spec=None,
                            contamination: float = 0.1, k_folds: int = 5,
                            seed: int | None = None, timing: bool = False,
                            outlier_scores: dict | None = None) -> ExperimentReport:
    """Remove each method's flagged subjects and rerun the RBC and regression protocols.

    Isolation forest and LOF score the feature matrix; the SDI method uses the
    per-factor FilterPlan on item responses.  ``outlier_scores`` may carry
    precomputed ``OutlierScores`` keyed by method.
    """
    t0 = time.perf_counter()
    seed = _default_seed(cohort, seed)
    cls_spec = cls_spec or ModelSpec("random_forest_cls", seed=seed)
    reg_spec = reg_spec or ModelSpec("random_forest_reg", seed=seed)
    ids = cohort.subject_ids
    scores = dict(outlier_scores or {})
    if "iforest" not in scores:
        scores["iforest"] = isolation_forest(cohort.features, seed=seed,
                                             contamination=contamination, subject_ids=ids)
    if "lof" not in scores:
        scores["lof"] = lof(cohort.features, contamination=contamination, subject_ids=ids)
    flagged = {m: scores[m].flagged_mask for m in ("iforest", "lof")}
    plans = cohort_plans(cohort, contamination, factors=factors)
    report = ExperimentReport("outlier_comparison", OUTLIER_COLUMNS)
    for method in ("iforest", "lof", "sdi"):
        for f in factors:
            removed = (~plans[f].retained_mask(ids)) if method == "sdi" else flagged[method]
            keep = ~removed
            row = dict(method=method, factor=f, n_removed=int(removed.sum()))
            try:
                labels = target_labels(cohort, f, "RBC", seed)
                rc = np.flatnonzero(keep & labels.retained)
                mc = crossval(cohort.features[rc], labels.labels[rc], cls_spec, k_folds, seed)
                spec = cohort.specs[f]
                y = (raw_totals(cohort.responses[f], spec) * spec.score_multiplier).astype(float)
                rr = np.flatnonzero(keep)
                mr = crossval(cohort.features[rr], y[rr], reg_spec, k_folds, seed)
                row.update(status="ok", n_class=int(len(rc)), n_reg=int(len(rr)),
                           **{k: mc[k] for k in ("accuracy", "precision", "recall", "f1")},
                           mae=mr["mae"], rmse=mr["rmse"])
            except Exception as exc:  # noqa: BLE001
                row["status"] = f"failed: {exc}"
            report.add(**row)
    for method in NOT_IMPLEMENTED:
        for f in factors:
            report.add(method=method, factor=f, status="not implemented")
    report.provenance = _provenance(
        cohort, seed, contamination=contamination, k_folds=k_folds,
        classifier=cls_spec.to_dict(), regressor=reg_spec.to_dict(),
        features="cohort feature matrix", scheme="RBC",
        filter_plans={f"{f}@{float(contamination)!r}": p.digest for f, p in plans.items()})
    if timing:
        report.provenance["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    return report


def _default_seed(cohort, seed):
    if seed is not None:
        return int(seed)
    return cohort.config.seed if cohort.config is not None else 0
