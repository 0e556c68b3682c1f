"""Symptom-discrepancy analysis for Likert questionnaires.

Scores sub-scales into severity bands, measures how far subjects with the
same total diverge in item profile (GDI/SDI), filters the most discrepant
subjects and benchmarks classifiers and regressors before and after.
"""
from ._version import __version__
from .analytics import (ClusterResult, RegressionFit, correlation_matrix, factor_regressions,
                        factor_scores, kmeans, ols_interactions, validity_indices)
from .experiments import (ExperimentReport, compare_outlier_methods, excluded_validation,
                          regression_experiment, subgroup_metrics, threshold_experiment)
from .heterogeneity import (DiscrepancyReport, FilterPlan, analyze, filter_iterative,
                            filter_top, sdi_sweep)
from .metrics import Metrics, crossval
from .models import ModelSpec, train
from .outliers import OutlierScores, isolation_forest, lof
from .scales import (DASS21, FACTORS, LabelSet, ResponseMatrix, ScaleSpec, Scheme,
                     SeverityBand, ValidationError, binarize, load_responses, save_responses,
                     total_scores)
from .synth import SynthCohort, SynthConfig, gen_cohort, load_cohort, save_cohort
