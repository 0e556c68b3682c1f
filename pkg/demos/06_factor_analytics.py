"""Correlations, interaction regressions and clusters on factor scores.

Run with: python3 demos/06_factor_analytics.py
"""
import numpy as np

from sdikit import (SynthConfig, correlation_matrix, factor_regressions, factor_scores,
                    gen_cohort, kmeans)

cohort = gen_cohort(SynthConfig(n_subjects=1500))
x = factor_scores(cohort.responses, cohort.specs)

print("factor-score correlations:")
for pair, r in correlation_matrix(x).items():
    print(f"  {pair}: {r:.3f}")

# Each factor regressed on the other two and their product.
for name, fit in factor_regressions(x).items():
    terms = {**fit.main, **fit.interactions}
    coef = ", ".join(f"{t} {c:+.3f}" for t, c in terms.items())
    print(f"{name}: R2={fit.r_squared:.3f}  {coef}")

for k in (2, 3):
    res = kmeans(x, k, seed=0)
    v = res.validity
    print(f"k={k}: sizes {np.bincount(res.assignments).tolist()}, silhouette {v['silhouette']:.3f}, "
          f"DB {v['davies_bouldin']:.3f}, CH {v['calinski_harabasz']:.1f}")
