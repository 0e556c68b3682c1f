import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sdikit.heterogeneity import (DEFAULT_FRACTIONS, analyze, discrepancy_from_values,
                                  exclusion_count, filter_iterative, filter_top, rank_top,
                                  sdi_sweep)
from sdikit.scales import DASS21, ResponseMatrix, ScaleSpec


def brute_force(values):
    """Plain-Python evaluation of the discrepancy definitions, loop by loop."""
    n, m = len(values), len(values[0])
    cols = [[row[j] for row in values] for j in range(m)]
    mus = [sum(c) / n for c in cols]
    sds = [math.sqrt(sum((v - mu) ** 2 for v in c) / n) for c, mu in zip(cols, mus)]
    z = [[(row[j] - mus[j]) / sds[j] if sds[j] > 0 else 0.0 for j in range(m)]
         for row in values]
    groups = {}
    for i, row in enumerate(values):
        groups.setdefault(sum(row), []).append(i)
    d = [0.0] * n
    gdi = {}
    for t, members in groups.items():
        centre = [sum(z[i][j] for i in members) / len(members) for j in range(m)]
        ds = []
        for i in members:
            d[i] = math.sqrt(sum((z[i][j] - centre[j]) ** 2 for j in range(m)))
            ds.append(d[i])
        mean = sum(ds) / len(ds)
        gdi[t] = mean + math.sqrt(sum((x - mean) ** 2 for x in ds) / len(ds))
    sdi = sum(len(groups[t]) * gdi[t] for t in groups) / n
    return d, gdi, sdi


TOY = [[0, 0], [3, 3], [1, 2], [2, 1]]


def test_toy_oracle():
    rep = discrepancy_from_values(np.array(TOY), np.array(TOY).sum(axis=1))
    _, gdi, sdi = brute_force(TOY)
    assert rep.sdi == pytest.approx(0.31623, abs=1e-5)
    assert rep.gdi[3] == pytest.approx(0.63246, abs=1e-5)
    assert rep.sdi == pytest.approx(sdi, abs=1e-12)
    assert rep.gdi[3] == pytest.approx(gdi[3], abs=1e-12)
    assert rep.gdi[0] == 0.0 and rep.gdi[6] == 0.0


likert = st.integers(1, 6).flatmap(
    lambda m: arrays(np.int64, st.tuples(st.integers(1, 25), st.just(m)),
                     elements=st.integers(0, 3)))


@settings(max_examples=300, deadline=None)
@given(likert)
def test_matches_brute_force(values):
    rep = discrepancy_from_values(values, values.sum(axis=1))
    d, gdi, sdi = brute_force(values.tolist())
    np.testing.assert_allclose(rep.distances, d, atol=1e-9)
    assert rep.sdi == pytest.approx(sdi, abs=1e-9)
    for t, g in gdi.items():
        assert rep.gdi[t] == pytest.approx(g, abs=1e-9)


def _sdi(values, totals=None):
    values = np.asarray(values)
    totals = values.sum(axis=1) if totals is None else totals
    return discrepancy_from_values(values, totals).sdi


@settings(max_examples=1000, deadline=None)
@given(likert, st.integers(1, 5), st.integers(-4, 4), st.floats(0.01, 100.0))
def test_rescale_and_shift_invariance(values, scale, shift, real_scale):
    base = _sdi(values)
    # integer transforms keep totals integral and go through the full grouping path
    assert _sdi(values * scale + shift) == pytest.approx(base, abs=1e-9)
    # arbitrary positive rescaling: groups follow the (uniformly rescaled) totals
    totals = values.sum(axis=1)
    assert _sdi(values * real_scale + shift * 0.37, totals) == pytest.approx(base, abs=1e-9)


@settings(max_examples=1000, deadline=None)
@given(likert, st.randoms(use_true_random=False))
def test_permutation_invariance_exact(values, rnd):
    base = discrepancy_from_values(values, values.sum(axis=1))
    rows = list(range(values.shape[0]))
    cols = list(range(values.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    moved = values[rows][:, cols]
    rep = discrepancy_from_values(moved, moved.sum(axis=1))
    assert rep.sdi == base.sdi
    assert rep.gdi == base.gdi
    assert rep.distances.tolist() == base.distances[rows].tolist()


def test_identical_profiles_give_zero():
    values = np.tile([1, 2, 0, 3], (9, 1))
    rep = discrepancy_from_values(values, values.sum(axis=1))
    assert rep.sdi == 0.0
    assert np.all(rep.distances == 0.0)


def test_band_summaries():
    spec = ScaleSpec("t", "t", 2, (1, 2, 3, 4), score_multiplier=1)
    r = ResponseMatrix(("a", "b", "c", "d"), TOY)
    rep = analyze(r, spec)
    # total 3 falls in band 3 (scores 3 and up to the last cutoff)
    assert rep.band_sdi["SEVERE"] == pytest.approx(0.63246, abs=1e-5)
    assert rep.band_sdi["NORMAL"] == 0.0


def test_exclusion_count_floor():
    assert exclusion_count(0.1, 1000) == 100
    assert exclusion_count(0.1, 8130) == 813
    assert exclusion_count(0.1, 9) == 0
    with pytest.raises(ValueError):
        exclusion_count(1.0, 10)


def test_rank_top_tie_break_ascending_id():
    scores = [1.0, 5.0, 5.0, 5.0, 0.0]
    ids = ["e", "d", "b", "c", "a"]
    top = rank_top(scores, ids, 2)
    assert sorted(ids[i] for i in top) == ["b", "c"]


def test_filter_top_removes_largest(small_cohort):
    r, spec = small_cohort.responses["stress"], small_cohort.specs["stress"]
    rep = analyze(r, spec)
    plan = filter_top(rep, 0.1)
    assert len(plan.excluded_ids) == 60
    ex = plan.retained_mask(r.subject_ids)
    assert rep.distances[~ex].min() >= rep.distances[ex].max()
    assert set(plan.excluded_ids).isdisjoint(plan.retained_ids)
    assert len(plan.excluded_ids) + len(plan.retained_ids) == r.n_subjects
    assert filter_top(rep, 0.1).digest == plan.digest


def test_filter_iterative_count(small_cohort):
    r, spec = small_cohort.responses["anxiety"], small_cohort.specs["anxiety"]
    plan = filter_iterative(r, spec, 0.2)
    assert len(plan.excluded_ids) == 120
    assert filter_iterative(r, spec, 0.0).excluded_ids == ()


def test_sweep_shape_and_first_row(small_cohort):
    r, spec = small_cohort.responses["depression"], DASS21["depression"]
    rows = sdi_sweep(r, spec)
    assert [q for q, _ in rows] == list(DEFAULT_FRACTIONS)
    assert len(rows) == 9
    assert rows[0][1] == analyze(r, spec).sdi
    with pytest.raises(ValueError):
        sdi_sweep(r, spec, [0.2, 0.1])


def test_report_serialization(small_cohort):
    r, spec = small_cohort.responses["anxiety"], small_cohort.specs["anxiety"]
    rep = analyze(r, spec)
    plan = filter_top(rep, 0.1)
    lines = rep.to_csv(plan).splitlines()
    assert lines[0] == "subject_id,total,group_size,d_j,excluded_flag"
    assert len(lines) == r.n_subjects + 1
    assert sum(int(ln.rsplit(",", 1)[1]) for ln in lines[1:]) == 60
    d = rep.to_dict()
    assert d["sdi"] == rep.sdi and len(d["subjects"]) == r.n_subjects
