import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from sdikit.scales import DASS21
from sdikit.synth import (SynthConfig, _composition_counts, _round_to_total, band_raw_ranges,
                          cohort_files, gen_cohort, load_cohort, save_cohort, scramble_profile)


@pytest.mark.parametrize("factor,ranges", [
    ("depression", [(0, 4), (5, 6), (7, 10), (11, 13), (14, 21)]),
    ("anxiety", [(0, 3), (4, 4), (5, 7), (8, 9), (10, 21)]),
    ("stress", [(0, 7), (8, 9), (10, 12), (13, 16), (17, 21)]),
])
def test_band_raw_ranges(factor, ranges):
    assert band_raw_ranges(DASS21[factor]) == ranges


@pytest.mark.parametrize("m,width", [(3, 3), (4, 2), (7, 3)])
def test_composition_counts_brute_force(m, width):
    counts = _composition_counts(m, m * width, width)
    for k in range(m + 1):
        for s in range(m * width + 1):
            n = sum(1 for c in itertools.product(range(width + 1), repeat=k) if sum(c) == s)
            assert counts[k][s] == n


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=9), st.integers(0, 2**32))
def test_scramble_keeps_total_and_bounds(row, seed):
    out = scramble_profile(row, np.random.default_rng(seed))
    assert out.sum() == sum(row)
    assert out.min() >= 0 and out.max() <= 3
    assert len(out) == len(row)


def test_scramble_uniform_over_compositions():
    rng = np.random.default_rng(42)
    comps = [c for c in itertools.product(range(4), repeat=3) if sum(c) == 4]
    draws = [tuple(scramble_profile([2, 2, 0], rng)) for _ in range(12000)]
    freq = [draws.count(c) for c in comps]
    assert sum(freq) == len(draws)
    assert chisquare(freq).pvalue > 1e-3


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1, 4), min_size=1, max_size=8), st.data())
def test_round_to_total(x, data):
    total = data.draw(st.integers(0, 3 * len(x)))
    row = _round_to_total(np.array(x), total, 0, 3)
    assert row.sum() == total and row.min() >= 0 and row.max() <= 3


def test_deterministic_and_seed_sensitive():
    a = gen_cohort(SynthConfig(n_subjects=200, seed=5))
    b = gen_cohort(SynthConfig(n_subjects=200, seed=5))
    c = gen_cohort(SynthConfig(n_subjects=200, seed=6))
    assert cohort_files(a) == cohort_files(b)
    assert not np.array_equal(a.features, c.features)


def test_subjects_independent_of_cohort_size():
    small = gen_cohort(SynthConfig(n_subjects=50, seed=3))
    big = gen_cohort(SynthConfig(n_subjects=120, seed=3))
    for f in DASS21:
        assert np.array_equal(small.responses[f].values, big.responses[f].values[:50])
    np.testing.assert_array_equal(small.latents, big.latents[:50])


def test_heterogeneity_rate_extremes():
    none = gen_cohort(SynthConfig(n_subjects=300, heterogeneity_rate=0.0))
    every = gen_cohort(SynthConfig(n_subjects=300, heterogeneity_rate=1.0))
    assert not none.scrambled.any() and every.scrambled.all()
    # scrambling preserves totals, so labels do not depend on the rate
    for f in DASS21:
        assert np.array_equal(none.responses[f].values.sum(1), every.responses[f].values.sum(1))


def test_scrambled_subjects_sit_far_from_group_profile(default_cohort):
    from sdikit.heterogeneity import analyze, group_by_total
    for i, f in enumerate(DASS21):
        r = default_cohort.responses[f]
        rep = analyze(r, DASS21[f])
        s = default_cohort.scrambled[:, i]
        diffs, weights = [], []
        for members in group_by_total(rep.totals).values():
            m = np.asarray(members)
            if s[m].any() and (~s[m]).any():
                diffs.append(rep.distances[m][s[m]].mean() - rep.distances[m][~s[m]].mean())
                weights.append(len(m))
        assert np.average(diffs, weights=weights) > 0


@pytest.mark.parametrize("bad", [
    {"factor_correlations": [[1, 0.99, 0.99], [0.99, 1, -0.99], [0.99, -0.99, 1]]},
    {"factor_correlations": [[1, 0.5, 0.5], [0.4, 1, 0.5], [0.5, 0.5, 1]]},
    {"heterogeneity_rate": 1.5},
    {"n_subjects": 0},
])
def test_config_validation(bad):
    with pytest.raises(ValueError) as e:
        SynthConfig.from_dict(bad)
    if "factor_correlations" in bad and bad["factor_correlations"][1][0] == 0.99:
        assert "positive definite" in str(e.value)


def test_config_round_trip_and_hash():
    cfg = SynthConfig(n_subjects=10, seed=1)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.config_hash == SynthConfig.from_dict(cfg.to_dict()).config_hash
    assert cfg.config_hash != SynthConfig(n_subjects=11, seed=1).config_hash


def test_cohort_save_load_round_trip(tmp_path, small_cohort):
    save_cohort(small_cohort, tmp_path)
    back = load_cohort(tmp_path)
    for f in DASS21:
        assert back.responses[f] == small_cohort.responses[f]
    assert np.array_equal(back.features, small_cohort.features)
    assert np.array_equal(back.latents, small_cohort.latents)
    assert np.array_equal(back.scrambled, small_cohort.scrambled)
    assert np.array_equal(back.group, small_cohort.group)
    assert back.config == small_cohort.config
    assert cohort_files(back) == cohort_files(small_cohort)


def test_load_without_ground_truth(tmp_path, small_cohort):
    save_cohort(small_cohort, tmp_path)
    (tmp_path / "ground_truth.csv").unlink()
    (tmp_path / "provenance.json").unlink()
    back = load_cohort(tmp_path)
    assert back.config is None and back.config_hash == "none"
    assert not back.scrambled.any()


def _protos(factor="depression", seed=1):
    from sdikit.synth import DEFAULT_BAND_COUNTS, make_prototypes
    return make_prototypes(DASS21[factor], DEFAULT_BAND_COUNTS[factor], 2, seed, 0, 3.0)


def test_latent_extremes_floor_and_ceiling():
    from sdikit.synth import responses_from_latent
    rng = np.random.default_rng(0)
    assert responses_from_latent(-np.inf, _protos(), rng).tolist() == [0] * 7
    assert responses_from_latent(np.inf, _protos(), rng).tolist() == [3] * 7


def test_total_lands_in_latent_band():
    from scipy.special import ndtr

    from sdikit.scales import bands_of
    from sdikit.synth import responses_from_latent
    p = _protos("anxiety")
    rng = np.random.default_rng(5)
    lat = rng.normal(size=2000)
    totals = np.array([responses_from_latent(v, p, rng).sum() for v in lat])
    band = np.minimum(np.searchsorted(p.band_quantiles, ndtr(lat), side="right"), 4)
    hit = bands_of(totals * 2, DASS21["anxiety"]) == band
    assert hit.mean() >= 0.9
    a = responses_from_latent(0.3, p, np.random.default_rng(9))
    b = responses_from_latent(0.3, p, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_scramble_unique_compositions():
    rng = np.random.default_rng(0)
    assert scramble_profile([0] * 7, rng).tolist() == [0] * 7
    assert scramble_profile([3] * 7, rng).tolist() == [3] * 7
    assert scramble_profile([3, 0, 0, 0, 0, 0, 0], rng).sum() == 3


def test_identical_responses_identical_features_without_noise():
    c = gen_cohort(SynthConfig(n_subjects=400, heterogeneity_rate=0.0, feature_noise=0.0))
    rows = np.hstack([c.responses[f].values for f in DASS21])
    _, first, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    assert len(first) < 400
    assert np.array_equal(c.features, c.features[first][inverse.ravel()])


def test_scrambled_count_binomial(default_cohort):
    n, p = default_cohort.n_subjects, default_cohort.config.heterogeneity_rate
    sd = np.sqrt(n * p * (1 - p))
    for count in default_cohort.scrambled.sum(axis=0):
        assert abs(count - n * p) < 4 * sd
