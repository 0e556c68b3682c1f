"""SDI filtering next to isolation forest and local outlier factor.

Run with: python3 demos/05_outlier_baselines.py
"""
import numpy as np

from sdikit import SynthConfig, compare_outlier_methods, gen_cohort, isolation_forest, lof

cohort = gen_cohort(SynthConfig(n_subjects=1000))
scrambled = cohort.scrambled.any(axis=1)

for name, res in (
    ("iforest", isolation_forest(cohort.features, seed=0, subject_ids=cohort.subject_ids)),
    ("lof", lof(cohort.features, subject_ids=cohort.subject_ids)),
):
    hit = np.mean(scrambled[res.flagged_mask])
    print(f"{name:>8}: flagged {len(res.flagged_ids)}, of which scrambled {hit:.2f}")

# The same model grid is trained after each method removes its share.
rep = compare_outlier_methods(cohort)
for row in rep.rows:
    if row["status"] != "ok":
        print(f"{row['method']:>8} {row['factor']:>10}: {row['status']}")
        continue
    print(f"{row['method']:>8} {row['factor']:>10}: removed {row['n_removed']}, "
          f"F1 {row['f1']:.3f}, MAE {row['mae']:.3f}")
