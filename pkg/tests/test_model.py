import math

import pytest
from hypothesis import given, strategies as st

from gainauth.config import DAY, HOUR, ModelConfig
from gainauth.features import FeatureObservation, TimeBin, all_bins, assign_bin, extract_features
from gainauth.model import (
    UserModel,
    cdf_eval,
    fit_cdf,
    fit_location_clusters,
    fit_model,
    greedy_clusters,
    interpolated_strict_cdf,
)

from conftest import BOOK, call, ping, trace_of

B14 = TimeBin(14, "all")
B3 = TimeBin(3, "all")


def strict_fraction(samples, x):
    return sum(1 for s in samples if s < x) / len(samples)


def obs(t_hour, f1, f2=0, call_class=None):
    b = TimeBin(t_hour, "all")
    return FeatureObservation(t_hour * HOUR, b, f1, f2, None, "tick", call_class)


# --- bins ---------------------------------------------------------------

def test_assign_bin_midnight():
    assert assign_bin(0) == TimeBin(0, "all")
    assert assign_bin(5 * DAY) == TimeBin(0, "all")


def test_assign_bin_saturday_afternoon():
    # 2026-01-03 was a Saturday
    sat = 1767398400 + 14 * HOUR + 30 * 60
    assert assign_bin(sat, "weekpart") == TimeBin(14, "weekend")
    assert assign_bin(sat - 2 * DAY, "weekpart") == TimeBin(14, "weekday")


def test_assign_bin_hour_boundary():
    assert assign_bin(15 * HOUR - 1) != assign_bin(15 * HOUR)


def test_assign_bin_offset():
    # 23:30 UTC is 01:30 at UTC+2
    assert assign_bin(23 * HOUR + 1800, utc_offset=2 * HOUR).hour == 1


def test_all_bins():
    assert len(all_bins("all")) == 24
    assert len(all_bins("weekpart")) == 48


# --- features -------------------------------------------------------------

def test_f2_worked_cases():
    good_bad_bad = trace_of(call(10, "A"), call(20, "Z"), call(30, "Y"))
    assert extract_features(good_bad_bad, BOOK)[-1].f2 == 2
    last_good = trace_of(call(10, "Z"), call(20, "Y"), call(30, "A"))
    assert extract_features(last_good, BOOK)[-1].f2 == 0


def test_f1_elapsed_since_good():
    feats = extract_features(trace_of(call(100, "A"), call(160, "Z")), BOOK)
    assert feats[1].f1 == 60


def test_f1_undefined_before_first_good():
    feats = extract_features(trace_of(call(100, "Z"), call(160, "A")), BOOK)
    assert feats[0].f1 is None
    assert feats[1].f1 == 0


def test_sms_resets_clock_unless_calls_only():
    trace = trace_of(call(100, "A"), call(200, "B", kind="sms"), call(300, "Z"))
    assert extract_features(trace, BOOK)[-1].f1 == 100
    calls_only = ModelConfig(f1_reset="calls")
    assert extract_features(trace, BOOK, calls_only)[-1].f1 == 200


def test_location_staleness():
    trace = trace_of(ping(0, 5, 5), call(100, "A"), call(5000, "A"))
    feats = extract_features(trace, BOOK)
    assert feats[1].loc == (5, 5)
    assert feats[2].loc is None


def test_ticks_interleave():
    feats = extract_features(trace_of(call(0, "A"), call(300, "A")), BOOK, tick_seconds=60)
    assert [o.source for o in feats] == ["event", "tick", "tick", "tick", "tick", "event"]
    assert [o.f1 for o in feats] == [0, 60, 120, 180, 240, 0]


# --- conditional cdf --------------------------------------------------------

def test_cdf_counting_anchor():
    cdf = fit_cdf([obs(14, v) for v in (600, 1200, 1800, 2400, 3000)], min_samples=3)
    samples = (600, 1200, 1800, 2400, 3000)
    v = cdf_eval(cdf, 1200, B14)
    assert abs(v - strict_fraction(samples, 1200)) <= 1 / 5
    assert v == pytest.approx(0.2)


def test_cdf_three_samples_example():
    cdf = fit_cdf([obs(14, v) for v in (600, 1200, 1800)], min_samples=3)
    v = cdf_eval(cdf, 1200, B14)
    assert 1 / 3 <= v <= 2 / 3
    assert abs(v - strict_fraction((600, 1200, 1800), 1200)) <= 1 / 3
    assert cdf_eval(cdf, 1500, B14) == pytest.approx(0.5)


def test_cdf_zero_and_beyond():
    cdf = fit_cdf([obs(14, v) for v in (600, 1200, 1800)], min_samples=3)
    assert cdf_eval(cdf, 0, B14) == 0.0
    assert cdf_eval(cdf, 1e9, B14) == 1.0


def test_cdf_sparse_bin_falls_back_to_global():
    cdf = fit_cdf([obs(14, v) for v in range(10, 110, 10)], min_samples=5)
    assert cdf.samples_for(B3) == cdf.global_samples
    assert cdf_eval(cdf, 55, B3) == cdf_eval(cdf, 55, B14)


def test_cdf_single_sample():
    cdf = fit_cdf([obs(14, 100)], min_samples=1)
    assert cdf_eval(cdf, 50, B14) == 0.0
    assert cdf_eval(cdf, 100, B14) == 0.0
    assert cdf_eval(cdf, 100.001, B14) == 1.0


def test_cdf_zero_observations():
    with pytest.raises(ValueError):
        fit_cdf([])
    with pytest.raises(ValueError):
        fit_cdf([obs(1, None)])


sample_lists = st.lists(st.floats(0, 1e5, allow_nan=False), min_size=1, max_size=60)


@given(sample_lists, st.floats(0, 2e5, allow_nan=False))
def test_interpolation_within_one_step(samples, x):
    s = sorted(samples)
    v = interpolated_strict_cdf(s, x)
    assert 0.0 <= v <= 1.0
    assert abs(v - strict_fraction(s, x)) <= 1 / len(s) + 1e-12


@given(sample_lists, st.floats(0, 2e5, allow_nan=False), st.floats(0, 2e5, allow_nan=False))
def test_interpolation_monotone(samples, x, y):
    s = sorted(samples)
    lo, hi = min(x, y), max(x, y)
    assert interpolated_strict_cdf(s, lo) <= interpolated_strict_cdf(s, hi)


@given(st.lists(st.floats(1, 1e5), min_size=1, max_size=30))
def test_interpolation_limits(samples):
    s = sorted(samples)
    assert interpolated_strict_cdf(s, 0) == 0.0
    assert interpolated_strict_cdf(s, 1e12) == 1.0


# --- bad runs ------------------------------------------------------------------

def test_bad_run_tails_from_observations():
    from gainauth.model import fit_bad_runs
    # 40 classified events in bin 14, 10 of them with f2 >= 1, 4 with f2 >= 2
    f2 = [0] * 30 + [1] * 6 + [2] * 4
    dist = fit_bad_runs([obs(14, 0, v, "bad" if v else "good") for v in f2])
    assert dist.tails[B14] == (40, 10, 4)
    assert dist.tail_probability(1, B14) == 0.25
    assert dist.tail_probability(0, B14) == 1.0
    # past the longest observed run the tail keeps shrinking geometrically
    assert dist.tail_probability(3, B14) == pytest.approx(0.1 * 0.5)


def test_bad_run_sparse_fallback():
    from gainauth.model import fit_bad_runs
    dist = fit_bad_runs([obs(14, 0, 1, "bad")], beta=0.5)
    assert dist.tail_probability(3, B14) == 0.125
    assert dist.tail_probability(3, B3) == 0.125


@given(st.lists(st.integers(0, 8), min_size=1, max_size=80))
def test_bad_run_tail_counts_match_brute_force(values):
    from gainauth.model import fit_bad_runs
    dist = fit_bad_runs([obs(14, 0, v, "bad") for v in values], min_samples=1)
    tails = dist.tails[B14]
    assert all(a >= b for a, b in zip(tails, tails[1:]))
    for k in range(len(tails)):
        assert tails[k] == sum(1 for v in values if v >= k)
    probs = [dist.tail_probability(k, B14) for k in range(12)]
    assert all(a >= b for a, b in zip(probs, probs[1:]))


# --- clusters -------------------------------------------------------------------

def test_cluster_identical_points():
    clusters, _ = greedy_clusters([(7.0, 7.0)] * 5, 250)
    assert clusters == [(7.0, 7.0, 0.0, 5)]


def test_cluster_two_groups():
    pts = [(0, 0), (10, 5), (10000, 0), (10010, 0)]
    clusters, labels = greedy_clusters(pts, 250)
    assert len(clusters) == 2
    assert labels == [0, 0, 1, 1]


def test_cluster_running_mean():
    clusters, _ = greedy_clusters([(0, 0), (100, 0)], 250)
    (c,) = clusters
    assert (c.x, c.y, c.radius, c.count) == (50.0, 0.0, 50.0, 2)


@given(st.lists(st.tuples(st.floats(-3000, 3000), st.floats(-3000, 3000)), min_size=1, max_size=40))
def test_cluster_membership_property(points):
    clusters, labels = greedy_clusters(points, 250)
    for (x, y), lab in zip(points, labels):
        c = clusters[lab]
        d = math.hypot(x - c.x, y - c.y)
        assert d <= 250 + 1e-9 or d <= c.radius + 1e-9
    assert sum(c.count for c in clusters) == len(points)
    assert all(c.radius >= 0 and c.count >= 1 for c in clusters)


def test_no_points_gives_empty_cluster_set():
    cs = fit_location_clusters({})
    assert not cs


# --- whole model ----------------------------------------------------------------

def test_fit_model_feature_count(afternoon_model):
    assert afternoon_model.R == 3
    assert afternoon_model.weights == pytest.approx((1 / 3,) * 3)


def test_fit_model_without_pings(afternoon_trace, afternoon_book):
    no_pings = afternoon_trace.replace_events(e for e in afternoon_trace if e.kind != "location_ping")
    model = fit_model(no_pings, afternoon_book)
    assert model.R == 2 and model.clusters is None


def test_fit_model_rejects_short_trace(afternoon_trace, afternoon_book):
    short = afternoon_trace.replace_events(e for e in afternoon_trace if e.timestamp < afternoon_trace.span[0] + 3 * DAY)
    with pytest.raises(ValueError, match="14 days"):
        fit_model(short, afternoon_book)


def test_model_round_trip(afternoon_model, tmp_path):
    path = tmp_path / "m.json"
    afternoon_model.save(path)
    loaded = UserModel.load(path)
    assert loaded == afternoon_model
    assert loaded.dumps() == afternoon_model.dumps()
    from gainauth.gain import gain_elapsed, gain_location
    for b in all_bins():
        for x in (0, 90, 1000, 7200):
            assert gain_elapsed(loaded, x, b) == gain_elapsed(afternoon_model, x, b)
        assert gain_location(loaded, (400.0, 80.0), b) == gain_location(afternoon_model, (400.0, 80.0), b)


def test_fit_model_deterministic(afternoon_trace, afternoon_book, afternoon_model):
    assert fit_model(afternoon_trace, afternoon_book).dumps() == afternoon_model.dumps()


def test_model_rejects_bad_version(afternoon_model):
    data = afternoon_model.to_dict()
    data["format_version"] = 99
    with pytest.raises(ValueError, match="format_version"):
        UserModel.from_dict(data)


def test_model_invariants(afternoon_model):
    with pytest.raises(ValueError):
        afternoon_model.with_training((0.5, 0.5), 0.1)
    with pytest.raises(ValueError):
        afternoon_model.with_training((1.0, 0.0, 0.0), 1.5)
