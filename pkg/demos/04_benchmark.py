"""Classifier and regressor performance before and after SDI filtering.

Run with: python3 demos/04_benchmark.py   (about a minute)
"""
from sdikit import FACTORS, SynthConfig, gen_cohort, regression_experiment, threshold_experiment
from sdikit.experiments import excluded_validation_report

cohort = gen_cohort(SynthConfig())

cls = threshold_experiment(cohort, schemes=("RBC",))
for f in FACTORS:
    for m in ("logreg", "random_forest_cls"):
        a = cls.cell(model=m, factor=f, q=0.0)["f1"]
        b = cls.cell(model=m, factor=f, q=0.1)["f1"]
        print(f"F1  {f:>10} {m:>18}: {a:.3f} -> {b:.3f}")

reg = regression_experiment(cohort)
for f in FACTORS:
    for m in ("ridge", "random_forest_reg"):
        a = reg.cell(model=m, factor=f, q=0.0)["mae"]
        b = reg.cell(model=m, factor=f, q=0.1)["mae"]
        print(f"MAE {f:>10} {m:>18}: {a:.3f} -> {b:.3f}")

# Train on the retained subjects, predict the excluded ones.
for row in excluded_validation_report(cohort, FACTORS, 0.1).rows:
    print(f"excluded {row['factor']:>10}: balanced accuracy {row['balanced_accuracy']:.3f}")

# Every report carries its provenance and serialises to CSV and JSON.
lines = cls.to_csv().splitlines()
print("\n".join(l for l in lines if l.startswith("#")))
print(next(l for l in lines if not l.startswith("#")))
