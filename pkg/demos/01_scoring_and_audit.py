"""Scoring a questionnaire and auditing symptom discrepancy.

Run with: python3 demos/01_scoring_and_audit.py
"""
import numpy as np

from sdikit import DASS21, ResponseMatrix, analyze, binarize, filter_top, total_scores
from sdikit.scales import band_of

# A tiny depression block: four subjects, seven items each, Likert 0-3.
# Subjects 1 and 2 share a raw total of 6 but spread it very differently.
values = np.array([
    [0, 0, 0, 0, 0, 0, 0],
    [1, 1, 1, 1, 1, 1, 0],
    [3, 3, 0, 0, 0, 0, 0],
    [3, 3, 3, 3, 3, 2, 2],
])
r = ResponseMatrix(("s1", "s2", "s3", "s4"), values)
spec = DASS21["depression"]

# Totals are reported on the doubled scale, as the instrument prescribes.
scaled = total_scores(r, spec)
bands = [int(band_of(s, spec)) for s in scaled]
print("scaled totals:", scaled, "bands:", bands)
print("BC labels:    ", binarize(bands, "BC").labels)
print("RBC labels:   ", binarize(bands, "RBC").labels)

# The audit groups subjects by raw total and measures how far each one sits
# from the mean profile of its group.
report = analyze(r, spec)
print(f"SDI = {report.sdi:.4f}")
for total, gdi in sorted(report.gdi.items()):
    print(f"  total {total:2d}: GDI {gdi:.4f} over {report.group_sizes[total]} subject(s)")

# Drop the most discrepant quarter.
plan = filter_top(report, 0.25)
print("excluded:", plan.excluded_ids)
