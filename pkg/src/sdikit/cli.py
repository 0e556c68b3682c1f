"""Command-line entry point: synth, audit, sweep, bench and compare-outliers.

Exit codes: 0 success, 1 invalid input, 2 computation failure.  Errors are
reported on stderr as one ``sdikit: error key=value ...`` line.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from ._version import TOOL, __version__
from .experiments import (CLUSTER, compare_outlier_methods, default_classifiers,
                          default_regressors, excluded_validation_report, regression_experiment,
                          subgroup_metrics, threshold_experiment)
from .heterogeneity import DEFAULT_FRACTIONS, analyze, filter_top, sdi_sweep
from .models import KINDS, ModelSpec
from .outliers import isolation_forest, lof
from .scales import DASS21, FACTORS, ScaleSpec, ValidationError, load_responses
from .synth import SynthConfig, cohort_files, gen_cohort, load_cohort

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 1, 2


class CliError(Exception):
    def __init__(self, code, message, kind="input", path=None, row=None, column=None):
        super().__init__(message)
        self.code, self.kind = code, kind
        self.path, self.row, self.column = path, row, column

    def line(self) -> str:
        parts = [f"{TOOL}: error", f"code={self.code}", f"kind={self.kind}"]
        if self.path is not None:
            parts.append(f"file={json.dumps(str(self.path))}")
        if self.row is not None:
            parts.append(f"row={self.row}")
        if self.column is not None:
            parts.append(f"column={json.dumps(str(self.column))}")
        parts.append(f"message={json.dumps(str(self))}")
        return " ".join(parts)


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are input errors, not computation failures.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_INPUT, message, kind="usage")


# ---------------------------------------------------------------- output helpers

class Output:
    def __init__(self, out_dir, fmt):
        self.dir = Path(out_dir)
        self.fmt = fmt
        self.written = []

    @property
    def csv(self) -> bool:
        return self.fmt in ("csv", "both")

    @property
    def json(self) -> bool:
        return self.fmt in ("json", "both")

    def write(self, name, text):
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            path = self.dir / name
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_INPUT, f"cannot write output: {exc.strerror}",
                           path=self.dir / name) from None
        self.written.append(path)

    def report(self, stem, report):
        if self.csv:
            self.write(f"{stem}.csv", report.to_csv())
        if self.json:
            self.write(f"{stem}.json", report.to_json())


def _comment_block(prov: dict) -> str:
    return "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in prov.items())


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _spec_hash(spec: ScaleSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- input helpers

def _load_spec(path) -> ScaleSpec:
    try:
        return ScaleSpec.from_json(path)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "scale spec not found", path=path) from None
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"invalid scale spec: {exc}", path=path) from None


def _read_responses(path, spec):
    try:
        return load_responses(path, spec)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "file not found", path=path) from None
    except ValidationError as exc:
        raise CliError(EXIT_INPUT, str(exc), kind="validation", path=path,
                       row=exc.row, column=exc.column) from None


def _scale_inputs(paths, factor=None, spec_path=None) -> list:
    """Resolve CLI inputs to (path, spec) pairs; a directory expands to its factor CSVs."""
    custom = _load_spec(spec_path) if spec_path else None
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            specs = dict(DASS21)
            prov = p / "provenance.json"
            if prov.exists():
                scales = json.loads(prov.read_text(encoding="utf-8")).get("scales", {})
                specs.update({f: ScaleSpec.from_dict(d) for f, d in scales.items()})
            found = [(p / f"{f}.csv", specs[f]) for f in FACTORS if (p / f"{f}.csv").exists()]
            if not found:
                raise CliError(EXIT_INPUT, "directory holds no factor CSVs", path=p)
            out.extend(found)
            continue
        if not p.exists():
            raise CliError(EXIT_INPUT, "file not found", path=p)
        if custom is not None:
            out.append((p, custom))
        elif (factor or p.stem) in DASS21:
            out.append((p, DASS21[factor or p.stem]))
        else:
            raise CliError(EXIT_INPUT, "cannot infer the scale; pass --factor or --spec", path=p)
    return out


def _load_cohort(path):
    path = Path(path)
    if not path.is_dir():
        raise CliError(EXIT_INPUT, "cohort directory not found", path=path)
    try:
        return load_cohort(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, "missing cohort file", path=exc.filename) from None
    except ValidationError as exc:
        raise CliError(EXIT_INPUT, str(exc), kind="validation", path=path,
                       row=exc.row, column=exc.column) from None


def _seed_for(args, cohort=None) -> int:
    if args.seed is not None:
        return args.seed
    if cohort is not None and cohort.config is not None:
        return cohort.config.seed
    return 0


def _model_specs(names, seed, n_trees):
    specs = []
    for name in names:
        params = {"n_trees": n_trees} if name.startswith("random_forest") else {}
        specs.append(ModelSpec(name, params, seed))
    return tuple(specs)


def _fractions(values):
    for q in values:
        if not 0.0 <= q < 1.0:
            raise CliError(EXIT_INPUT, f"fraction {q} outside [0, 1)", kind="usage")
    return [float(q) for q in values]


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, out: Output) -> int:
    config = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError(EXIT_INPUT, "config not found", path=args.config) from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_INPUT, f"invalid JSON: {exc.msg}", path=args.config,
                           row=exc.lineno) from None
    if args.seed is not None:
        config["seed"] = args.seed
    if args.n_subjects is not None:
        config["n_subjects"] = args.n_subjects
    try:
        cfg = SynthConfig.from_dict(config)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"invalid config: {exc}", path=args.config) from None
    cohort = gen_cohort(cfg)
    for name, text in cohort_files(cohort, cfg.seed).items():
        out.write(name, text)
    print(f"subjects={cohort.n_subjects} seed={cfg.seed} config_hash={cfg.config_hash}")
    return EXIT_OK


def cmd_audit(args, out: Output) -> int:
    seed = _seed_for(args)
    for path, spec in _scale_inputs(args.inputs, args.factor, args.spec):
        r = _read_responses(path, spec)
        try:
            rep = analyze(r, spec)
            plan = filter_top(rep, args.q)
        except ValueError as exc:
            raise CliError(EXIT_COMPUTE, str(exc), kind="compute", path=path) from None
        prov = {"tool": TOOL, "version": __version__, "seed": seed,
                "config_hash": _spec_hash(spec), "input": str(path),
                "input_sha256": _file_digest(path), "scale": spec.to_dict(),
                "filter_plan": {"fraction": plan.fraction, "n_excluded": len(plan.excluded_ids),
                                "digest": plan.digest}}
        stem = f"audit_{spec.factor}"
        if out.json:
            out.write(f"{stem}.json", _dump({"provenance": prov, "report": rep.to_dict()}))
        if out.csv:
            out.write(f"{stem}.csv", _comment_block(prov) + rep.to_csv(plan))
        print(f"{spec.factor} sdi={rep.sdi:.6f} n={rep.n_subjects} groups={len(rep.gdi)}")
        for band, v in rep.band_sdi.items():
            print(f"{spec.factor} band={band} sdi={v:.6f}")
    return EXIT_OK


def cmd_sweep(args, out: Output) -> int:
    seed = _seed_for(args)
    fractions = _fractions(args.fractions)
    for path, spec in _scale_inputs(args.inputs, args.factor, args.spec):
        r = _read_responses(path, spec)
        try:
            rows = sdi_sweep(r, spec, fractions, iterative=args.iterative)
        except ValueError as exc:
            raise CliError(EXIT_COMPUTE, str(exc), kind="compute", path=path) from None
        prov = {"tool": TOOL, "version": __version__, "seed": seed,
                "config_hash": _spec_hash(spec), "input": str(path),
                "input_sha256": _file_digest(path), "scale": spec.factor,
                "iterative": args.iterative}
        stem = f"sweep_{spec.factor}"
        if out.csv:
            body = "fraction,sdi\n" + "".join(f"{q!r},{v!r}\n" for q, v in rows)
            out.write(f"{stem}.csv", _comment_block(prov) + body)
        if out.json:
            out.write(f"{stem}.json", _dump({
                "provenance": prov, "rows": [{"fraction": q, "sdi": v} for q, v in rows]}))
        for q, v in rows:
            print(f"{spec.factor} fraction={q:.2f} sdi={v:.6f}")
    return EXIT_OK


def _subgroup_column(cohort_dir, column, n):
    path = Path(cohort_dir) / "ground_truth.csv"
    if not path.exists():
        raise CliError(EXIT_INPUT, "subgroup column needs ground_truth.csv", path=path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    header = rows[0]
    if column not in header:
        raise CliError(EXIT_INPUT, f"no column {column!r}", path=path, row=0)
    j = header.index(column)
    values = np.array([r[j] for r in rows[1:]], dtype=object)
    if len(values) != n:
        raise CliError(EXIT_INPUT, "row count differs from the cohort", path=path)
    return values


def cmd_bench(args, out: Output) -> int:
    cohort = _load_cohort(args.cohort)
    seed = _seed_for(args, cohort)
    q_list = _fractions(args.q)
    factors = tuple(args.factors)
    if args.excluded_validation:
        q = next((q for q in q_list if q > 0), None)
        if q is None:
            raise CliError(EXIT_INPUT, "excluded validation needs a positive --q", kind="usage")
        spec = _model_specs([args.models[0] if args.models else "random_forest_cls"],
                            seed, args.n_trees)[0]
        scheme = args.scheme[0] if args.scheme else "BC"
        report = excluded_validation_report(cohort, factors, q, spec, scheme, seed,
                                            timing=args.timing)
        stem = "bench_excluded_validation"
    else:
        if args.regression:
            names = args.models or [s.kind for s in default_regressors()]
            kwargs = dict(factors=tuple(f for f in factors if f != CLUSTER), q_list=q_list,
                          k_folds=args.k_folds, seed=seed, iterative=args.iterative,
                          timing=args.timing)
            experiment = "regression"
        else:
            names = args.models or [s.kind for s in default_classifiers()]
            kwargs = dict(factors=factors, schemes=tuple(args.scheme or ["RBC"]), q_list=q_list,
                          k_folds=args.k_folds, seed=seed, balance=args.balance,
                          iterative=args.iterative, timing=args.timing)
            experiment = "threshold"
        specs = _model_specs(names, seed, args.n_trees)
        wrong = [s.kind for s in specs if s.is_classifier == args.regression]
        if wrong:
            raise CliError(EXIT_INPUT, f"model(s) {wrong} do not fit a {experiment} run",
                           kind="usage")
        kwargs["model_specs"] = specs
        if args.subgroup:
            grouping = _subgroup_column(args.cohort, args.subgroup, cohort.n_subjects)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                report = subgroup_metrics(cohort, grouping, experiment, args.min_subgroup,
                                          **kwargs)
            for w in caught:
                print(f"{TOOL}: warning message={json.dumps(str(w.message))}", file=sys.stderr)
            stem = f"bench_subgroup_{experiment}"
        elif args.regression:
            report = regression_experiment(cohort, **kwargs)
            stem = "bench_regression"
        else:
            report = threshold_experiment(cohort, **kwargs)
            stem = "bench_classification"
    out.report(stem, report)
    print(f"{report.kind} rows={len(report.rows)} failed={len(report.failed)} "
          f"digest={report.digest}")
    if report.failed:
        for r in report.failed:
            print(f"{TOOL}: error code={EXIT_COMPUTE} kind=cell "
                  f"cell={json.dumps({k: r.get(k) for k in report.columns[:4]})} "
                  f"message={json.dumps(r['status'])}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_compare_outliers(args, out: Output) -> int:
    cohort = _load_cohort(args.cohort)
    seed = _seed_for(args, cohort)
    c = args.contamination
    if not 0.0 < c < 1.0:
        raise CliError(EXIT_INPUT, f"contamination {c} outside (0, 1)", kind="usage")
    ids = cohort.subject_ids
    scores = {
        "iforest": isolation_forest(cohort.features, n_trees=args.iforest_trees, seed=seed,
                                    contamination=c, subject_ids=ids),
        "lof": lof(cohort.features, args.k_neighbors, contamination=c, subject_ids=ids),
    }
    factors = tuple(args.factors)
    cls_spec, reg_spec = _model_specs(["random_forest_cls", "random_forest_reg"], seed,
                                      args.n_trees)
    report = compare_outlier_methods(cohort, factors, cls_spec, reg_spec, c, args.k_folds,
                                     seed, args.timing, outlier_scores=scores)
    out.report("compare_outliers", report)
    if out.csv:
        for method, s in scores.items():
            prov = {"tool": TOOL, "version": __version__, "seed": seed,
                    "config_hash": cohort.config_hash, "method": method, "contamination": c}
            out.write(f"outliers_{method}.csv", _comment_block(prov) + s.to_csv())
    print(f"{report.kind} rows={len(report.rows)} failed={len(report.failed)} "
          f"digest={report.digest}")
    for r in report.select(status="ok"):
        print(f"{r['method']} {r['factor']} f1={r['f1']:.4f} mae={r['mae']:.4f}")
    return EXIT_COMPUTE if report.failed else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="master seed (default: the cohort's config seed, else 0)")
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (default: .)")
    g.add_argument("--format", choices=("csv", "json", "both"), default=argparse.SUPPRESS,
                   help="report formats to write (default: both)")

    p = _Parser(prog=TOOL, description="Symptom-discrepancy auditing and filtering experiments.",
                parents=[common])
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scale_args(sp):
        sp.add_argument("inputs", nargs="+",
                        help="response CSVs or cohort directories (factor CSVs inside)")
        sp.add_argument("--factor", choices=FACTORS,
                        help="scale of the CSV inputs (default: file stem)")
        sp.add_argument("--spec", help="JSON scale spec for non-DASS inputs")

    sp = sub.add_parser("audit", parents=[common], help="SDI per factor and severity band")
    scale_args(sp)
    sp.add_argument("--q", type=float, default=0.1,
                    help="exclusion fraction marked in the per-subject CSV")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("sweep", parents=[common], help="retained-set SDI across fractions")
    scale_args(sp)
    sp.add_argument("--fractions", type=float, nargs="+", default=list(DEFAULT_FRACTIONS))
    sp.add_argument("--iterative", action="store_true",
                    help="re-rank after each 5%% removal round")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("synth", parents=[common], help="generate a seeded synthetic cohort")
    sp.add_argument("--config", help="JSON generator config (missing keys take defaults)")
    sp.add_argument("--n-subjects", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("bench", parents=[common], help="filtering experiment grids")
    sp.add_argument("cohort", help="cohort directory")
    sp.add_argument("--scheme", nargs="+", type=str.upper, choices=("BC", "RBC"),
                    help="label schemes (default: RBC; BC for --excluded-validation)")
    sp.add_argument("--q", type=float, nargs="+", default=[0.0, 0.1])
    sp.add_argument("--models", nargs="+", choices=KINDS)
    sp.add_argument("--factors", nargs="+", choices=FACTORS + (CLUSTER,),
                    default=list(FACTORS) + [CLUSTER])
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--regression", action="store_true", help="predict factor totals")
    mode.add_argument("--excluded-validation", action="store_true",
                      help="train on retained, test on excluded subjects")
    sp.add_argument("--subgroup", metavar="COLUMN", help="ground_truth.csv column to split on")
    sp.add_argument("--min-subgroup", type=int, default=50)
    sp.add_argument("--balance", action="store_true", help="down-sample training folds")
    sp.add_argument("--iterative", action="store_true")
    sp.add_argument("--k-folds", type=int, default=5)
    sp.add_argument("--n-trees", type=int, default=100)
    sp.add_argument("--timing", action="store_true",
                    help="record wall-clock time (outputs then differ between runs)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("compare-outliers", parents=[common],
                        help="isolation forest and LOF against SDI filtering")
    sp.add_argument("cohort", help="cohort directory")
    sp.add_argument("--contamination", type=float, default=0.10)
    sp.add_argument("--factors", nargs="+", choices=FACTORS, default=list(FACTORS))
    sp.add_argument("--k-neighbors", type=int, default=20)
    sp.add_argument("--iforest-trees", type=int, default=100)
    sp.add_argument("--n-trees", type=int, default=100)
    sp.add_argument("--k-folds", type=int, default=5)
    sp.add_argument("--timing", action="store_true")
    sp.set_defaults(func=cmd_compare_outliers)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name, default in (("seed", None), ("out_dir", "."), ("format", "both")):
            if not hasattr(args, name):
                setattr(args, name, default)
        out = Output(args.out_dir, args.format)
        code = args.func(args, out)
        for path in out.written:
            print(f"wrote {path}")
        return code
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - any other failure is a computation error
        err = CliError(EXIT_COMPUTE, f"{type(exc).__name__}: {exc}", kind="compute")
        print(err.line(), file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
