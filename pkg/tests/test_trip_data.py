import datetime as dt
import math
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tripkg.errors import ConfigError, DataError
from tripkg.trip_data import (
    SECONDS_PER_DAY,
    FilterThresholds,
    IndividualProfile,
    ObservationSplit,
    TemporalConfig,
    TripRecord,
    accidental_potential_rates,
    build_profiles,
    compute_entropy,
    entropy_fraction,
    filter_low_predictability,
    map_day_nature,
    map_time_span,
    mean_rates,
    parse_trips,
    split_periods,
)

HEADER = "vehicle_id,date,ftime,fzone,tzone\n"
ZONES = set(range(1, 50))


def test_parse_single_row():
    recs = parse_trips(HEADER + "V001,2019-08-05,08:15:00,12,37\n", ZONES)
    assert recs == [TripRecord("V001", dt.date(2019, 8, 5), 29700, 12, 37)]


def test_parse_empty_body():
    assert parse_trips(HEADER, ZONES) == []


def test_parse_unknown_zone_named():
    with pytest.raises(DataError, match="999"):
        parse_trips(HEADER + "V001,2019-08-05,08:15:00,12,999\n", ZONES)


def test_parse_malformed_row_reports_line():
    text = HEADER + "V001,2019-08-05,08:15:00,12,37\nV002,2019-13-05,08:15:00,12,37\n"
    with pytest.raises(DataError, match="line 3"):
        parse_trips(text, ZONES)


def test_parse_missing_header_field():
    with pytest.raises(DataError, match="tzone"):
        parse_trips("vehicle_id,date,ftime,fzone\n", ZONES)


def test_parse_preserves_order_and_header_permutation():
    text = "tzone,vehicle_id,fzone,date,ftime\n5,B,1,2019-08-06,23:59:59\n6,A,2,2019-08-05,00:00:00\n"
    recs = parse_trips(text, ZONES)
    assert [r.vehicle_id for r in recs] == ["B", "A"]
    assert recs[0].ftime == SECONDS_PER_DAY - 1


SPLIT = ObservationSplit.from_days(dt.date(2019, 8, 1), 7, 14)


@pytest.mark.parametrize("day,where", [(3, "observed"), (10, "future"), (40, "discarded")])
def test_split_periods_assignment(day, where):
    rec = TripRecord("V", dt.date(2019, 8, 1) + dt.timedelta(days=day - 1), 0, 1, 2)
    res = split_periods([rec], SPLIT)
    assert res.counts[where] == 1
    assert sum(res.counts.values()) == 1


def test_split_rejects_overlap():
    with pytest.raises(ConfigError):
        ObservationSplit(dt.date(2019, 8, 1), dt.date(2019, 8, 7), dt.date(2019, 8, 7), dt.date(2019, 8, 9))


@given(st.lists(st.integers(min_value=-5, max_value=45), max_size=60))
def test_split_partition_property(days):
    recs = [TripRecord("V", dt.date(2019, 8, 1) + dt.timedelta(days=d), 0, 1, 2) for d in days]
    res = split_periods(recs, SPLIT)
    assert len(res.observed) + len(res.future) + res.discarded == len(recs)


def test_time_span_defaults():
    cfg = TemporalConfig()
    assert len(cfg.time_spans) == 7
    assert map_time_span(8 * 3600, cfg) == "morning_peak"
    assert map_time_span(0, cfg) == cfg.time_spans[0].label
    assert map_time_span(SECONDS_PER_DAY - 1, cfg) == cfg.time_spans[-1].label


@given(st.integers(min_value=0, max_value=SECONDS_PER_DAY - 1))
def test_time_span_total(t):
    cfg = TemporalConfig()
    hits = [s.label for s in cfg.time_spans if s.start <= t < s.end]
    assert len(hits) == 1
    assert map_time_span(t, cfg) == hits[0]


def test_time_spans_must_cover_day():
    with pytest.raises(ConfigError):
        TemporalConfig.from_boundaries("a@01:00,b@12:00")
    cfg = TemporalConfig.from_boundaries("a@00:00,b@12:00")
    assert map_time_span(12 * 3600, cfg) == "b"


def test_day_nature():
    cfg = TemporalConfig(holiday_calendar=frozenset({dt.date(2019, 8, 7)}))
    assert map_day_nature(dt.date(2019, 8, 10), cfg) == "holiday"  # Saturday
    assert map_day_nature(dt.date(2019, 8, 7), cfg) == "holiday"  # Wednesday in calendar
    assert map_day_nature(dt.date(2019, 8, 14), cfg) == "workday"  # Wednesday


def test_entropy_examples():
    assert compute_entropy({4: 5}) == 0.0
    assert compute_entropy({1: 1, 2: 1}) == pytest.approx(1.0, abs=1e-15)
    oracle = -(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25))
    assert compute_entropy({1: 3, 2: 1}) == pytest.approx(oracle, abs=1e-15)
    assert round(compute_entropy({1: 3, 2: 1}), 4) == 0.8113


def test_entropy_zero_trips():
    with pytest.raises(DataError):
        compute_entropy({})


@given(st.lists(st.integers(min_value=1, max_value=20), min_size=1, max_size=12))
def test_entropy_bounds(counts):
    h = compute_entropy(counts)
    upper = math.log2(len(counts))
    assert -1e-12 <= h <= upper + 1e-12
    if len(set(counts)) == 1:
        assert h == pytest.approx(upper, abs=1e-12)
    elif len(counts) > 1:
        assert h < upper


def _profile(obs, fut):
    return IndividualProfile("V", len(obs), {z: 1 for z in obs}, frozenset(fut))


def test_rates_examples():
    qa, qp = accidental_potential_rates(_profile("abc", "bd"))
    assert qa == pytest.approx(200 / 3)
    assert qp == 50.0
    assert accidental_potential_rates(_profile("ab", "ab")) == (0.0, 0.0)
    assert accidental_potential_rates(_profile("ab", "cd")) == (100.0, 100.0)


def test_rates_undefined_excluded_from_mean():
    profiles = [_profile("ab", ""), _profile("ab", "ac")]
    assert accidental_potential_rates(profiles[0]) == (100.0, None)
    qa, qp = mean_rates(profiles)
    assert qa == 75.0
    assert qp == 50.0


@given(st.sets(st.integers(0, 9), min_size=1), st.sets(st.integers(0, 9)))
def test_rates_range(obs, fut):
    qa, qp = accidental_potential_rates(IndividualProfile("V", 1, {z: 1 for z in obs}, frozenset(fut)))
    assert 0 <= qa <= 100
    assert (qa == 0) == obs.issubset(fut)
    if fut:
        assert 0 <= qp <= 100


def test_build_profiles():
    d = dt.date(2019, 8, 5)
    obs = [TripRecord("B", d, 0, 1, 2), TripRecord("A", d, 0, 1, 3), TripRecord("A", d, 0, 2, 3)]
    fut = [TripRecord("A", d, 0, 3, 4), TripRecord("C", d, 0, 1, 2)]
    p = build_profiles(obs, fut)
    assert list(p) == ["A", "B"]
    assert p["A"].trip_count == 2
    assert p["A"].destination_counts == {3: 2}
    assert p["A"].potential_destinations == {4}


def _counts_profile(vid, counts):
    c = Counter(counts)
    return IndividualProfile(vid, sum(c.values()), dict(c))


def test_filter_identity_when_disabled():
    profiles = {v: _counts_profile(v, [1, 2, 2]) for v in "abc"}
    res = filter_low_predictability(profiles, FilterThresholds())
    assert res.selected == profiles
    assert res.rejections == {}


def test_filter_max_trips():
    profiles = {"a": _counts_profile("a", list(range(12))), "b": _counts_profile("b", [1, 2])}
    res = filter_low_predictability(profiles, FilterThresholds(max_trip_count=10))
    assert set(res.selected) == {"b"}
    assert res.rejections == {"max_trip_count": 1}


def test_filter_entropy_fraction():
    # 4 trips over counts {3: 1, ...}: entropy / log2(4)
    p = _counts_profile("a", [1, 1, 2, 3])
    frac = entropy_fraction(p)
    assert frac == pytest.approx(1.5 / 2.0)
    assert set(filter_low_predictability({"a": p}, FilterThresholds(min_entropy_fraction=0.7)).selected) == {"a"}
    assert not filter_low_predictability({"a": p}, FilterThresholds(min_entropy_fraction=0.8)).selected
    uniform = _counts_profile("u", list(range(8)))
    assert entropy_fraction(uniform) == pytest.approx(1.0)
    assert "u" in filter_low_predictability({"u": uniform}, FilterThresholds(min_entropy_fraction=0.8)).selected
