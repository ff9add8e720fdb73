import math
import random
from datetime import date, datetime, timedelta, timezone

import pytest
from hypothesis import given, strategies as st

from gridforge.markers import MarkerFlag
from gridforge.plants import PlantRecord
from gridforge.timeseries import (CapacityError, DailyCapacitySeries, GridError, TimeSeries, aggregate_to_hourly,
                                  build_daily_capacity, capacity_profile, fill_gaps, na_runs, series_from_points,
                                  validate_grid)
from oracles import daily_capacity, hourly_mean, linear_fill

UTC = timezone.utc
T0 = datetime(2017, 1, 1, tzinfo=UTC)
I = MarkerFlag.INTERPOLATED
OWN = MarkerFlag.OWN_CALCULATION


def ts(values, res=15, start=T0):
    return TimeSeries("x", res, start, tuple(values))


class TestValidateGrid:
    def test_clean(self):
        assert validate_grid(ts([1.0, None, 2])) == []

    def test_bad_resolution(self):
        assert [v.kind for v in validate_grid(ts([1.0], res=20))] == ["resolution"]

    def test_naive_start(self):
        assert validate_grid(ts([1.0], start=datetime(2017, 1, 1)))[0].kind == "timezone"

    def test_misaligned(self):
        assert validate_grid(ts([1.0], start=T0 + timedelta(minutes=5)))[0].kind == "alignment"

    def test_nan_value_reports_index(self):
        v = validate_grid(ts([1.0, 2.0, math.nan]))
        assert (v[0].kind, v[0].index) == ("value", 2)

    def test_marker_length(self):
        bad = TimeSeries("x", 15, T0, (1.0, 2.0), (frozenset(),))
        assert validate_grid(bad)[0].kind == "length"

    def test_unknown_marker(self):
        bad = TimeSeries("x", 15, T0, (1.0,), (frozenset({"made_up"}),))
        assert validate_grid(bad)[0].kind == "marker"


class TestFillGaps:
    def test_interior_run_filled(self):
        out = fill_gaps(ts([0.0, None, None, 3.0]))
        assert out.values == (0.0, 1.0, 2.0, 3.0)
        assert out.markers == (frozenset(), {I}, {I}, frozenset())

    def test_edges_untouched(self):
        out = fill_gaps(ts([None, 1.0, None]))
        assert out.values == (None, 1.0, None)
        assert all(not m for m in out.markers)

    def test_limit_is_inclusive(self):
        eight = [1.0] + [None] * 8 + [10.0]
        assert None not in fill_gaps(ts(eight)).values
        nine = [1.0] + [None] * 9 + [10.0]
        assert fill_gaps(ts(nine)).values == tuple(nine)

    def test_zero_gap_is_noop(self):
        s = ts([1.0, None, 2.0])
        assert fill_gaps(s, timedelta(0)) == s

    def test_bad_max_gap(self):
        with pytest.raises(GridError):
            fill_gaps(ts([1.0]), timedelta(minutes=10))
        with pytest.raises(GridError):
            fill_gaps(ts([1.0]), timedelta(minutes=-15))

    def test_invalid_input(self):
        with pytest.raises(GridError):
            fill_gaps(ts([1.0], res=20))

    def test_existing_markers_kept(self):
        s = TimeSeries("x", 60, T0, (1.0, None, 3.0), (frozenset({MarkerFlag.IMPLAUSIBLE}),) * 3)
        out = fill_gaps(s)
        assert out.markers[1] == {MarkerFlag.IMPLAUSIBLE, I}


values_st = st.lists(st.one_of(st.none(), st.floats(-1e4, 1e4, allow_nan=False)), max_size=60)


@given(values_st, st.sampled_from([15, 30, 60]), st.integers(0, 12))
def test_fill_matches_oracle(values, res, k):
    out = fill_gaps(ts(values, res), timedelta(minutes=res * k))
    expected, filled = linear_fill(values, k)
    for got, want, f, m in zip(out.values, expected, filled, out.markers):
        if want is None:
            assert got is None and not m
        else:
            assert got == want  # both are the nearest float to the exact line
            assert (I in m) == f


@given(values_st)
def test_fill_idempotent_and_additive(values):
    s = ts(values)
    once = fill_gaps(s)
    assert fill_gaps(once) == once
    for v0, v1, m0, m1 in zip(s.values, once.values, s.markers, once.markers):
        assert m0 <= m1
        if v0 is not None:
            assert v1 == v0


def test_na_runs():
    assert na_runs([None, 1, None, None, 2, None]) == [(0, 1), (2, 4), (5, 6)]


class TestAggregate:
    def test_mean_and_markers(self):
        s = TimeSeries("x", 15, T0, (1.0, 2.0, 3.0, 4.0, 1.0, None, 1.0, 1.0),
                       (frozenset(), {I}, frozenset(), frozenset()) + (frozenset(),) * 4)
        out = aggregate_to_hourly(s)
        assert out.resolution_minutes == 60
        assert out.values == (2.5, None)
        assert out.markers == ({I, OWN}, {OWN})

    def test_half_hourly(self):
        assert aggregate_to_hourly(ts([1.0, 2.0], 30)).values == (1.5,)

    def test_rejects_hourly(self):
        with pytest.raises(GridError):
            aggregate_to_hourly(ts([1.0], 60))

    def test_rejects_partial_hour(self):
        with pytest.raises(GridError):
            aggregate_to_hourly(ts([1.0, 2.0, 3.0]))
        with pytest.raises(GridError):
            aggregate_to_hourly(ts([1.0] * 4, start=T0 + timedelta(minutes=15)))


@given(st.sampled_from([15, 30]), st.data())
def test_aggregate_matches_oracle(res, data):
    k = 60 // res
    hours = data.draw(st.integers(0, 10))
    values = data.draw(st.lists(st.one_of(st.none(), st.floats(-1e5, 1e5)), min_size=hours * k,
                                max_size=hours * k))
    got = aggregate_to_hourly(ts(values, res)).values
    for g, w in zip(got, hourly_mean(values, k)):
        assert (g is None) == (w is None)
        if w is not None:
            assert abs(g - w) <= 1e-12 * max(1.0, abs(w))


class TestSeriesFromPoints:
    def test_holes_become_na(self):
        s = series_from_points("x", [T0, T0 + timedelta(hours=2)], [1.0, 3.0], 60)
        assert s.values == (1.0, None, 3.0)

    def test_window(self):
        s = series_from_points("x", [T0], [1.0], 60, start=T0 - timedelta(hours=1), end=T0 + timedelta(hours=2))
        assert s.values == (None, 1.0, None)

    def test_off_grid(self):
        with pytest.raises(GridError):
            series_from_points("x", [T0 + timedelta(minutes=7)], [1.0], 15, start=T0)

    def test_duplicate(self):
        with pytest.raises(GridError):
            series_from_points("x", [T0, T0], [1.0, 2.0], 60)


class TestCapacityProfile:
    cap = DailyCapacitySeries("wind", date(2017, 1, 1), (100.0, 200.0))

    def test_ratio_and_markers(self):
        gen = TimeSeries("wind", 60, T0 + timedelta(hours=22), (25.0, None, 50.0, 210.0))
        out = capacity_profile(gen, self.cap)
        assert out.series_id == "wind_profile"
        assert out.values == (0.25, None, 0.25, 1.05)
        assert all(OWN in m for m in out.markers)
        assert [MarkerFlag.IMPLAUSIBLE in m for m in out.markers] == [False, False, False, True]

    def test_tolerance_boundary(self):
        gen = TimeSeries("wind", 60, T0, (102.0,))
        assert MarkerFlag.IMPLAUSIBLE not in capacity_profile(gen, self.cap).markers[0]

    def test_missing_capacity(self):
        gen = TimeSeries("wind", 60, T0 + timedelta(days=2), (1.0,))
        with pytest.raises(CapacityError):
            capacity_profile(gen, self.cap)

    def test_zero_capacity(self):
        gen = TimeSeries("wind", 60, T0, (1.0,))
        with pytest.raises(CapacityError):
            capacity_profile(gen, DailyCapacitySeries("wind", date(2017, 1, 1), (0.0,)))


def plant(i, node, cap, on, off=None, gross=None):
    return PlantRecord(f"P{i}", f"plant {i}", "DE", node, capacity_net_mw=cap, capacity_gross_mw=gross,
                       commissioned=on, decommissioned=off)


class TestDailyCapacity:
    def test_example(self, taxonomy):
        recs = [plant(1, "wind_onshore", 2.0, date(2016, 1, 2)),
                plant(2, "wind_offshore", 5.0, date(2015, 1, 1), date(2016, 1, 3)),
                plant(3, "solar", 9.0, date(2016, 1, 1)),
                plant(4, "wind_onshore", None, date(2016, 1, 1), gross=1.5),
                plant(5, "wind_onshore", 3.0, None)]
        res = build_daily_capacity(recs, "wind", date(2016, 1, 1), date(2016, 1, 4), taxonomy)
        assert res.series.capacity == (6.5, 8.5, 3.5, 3.5)
        assert res.excluded == ["P5"]
        assert res.series.on(date(2016, 1, 5)) is None

    def test_end_before_start(self, taxonomy):
        with pytest.raises(ValueError):
            build_daily_capacity([], "wind", date(2016, 1, 2), date(2016, 1, 1), taxonomy)

    def test_matches_oracle_and_order_free(self, taxonomy):
        rng = random.Random(7)
        nodes = ["wind_onshore", "wind_offshore", "solar", "hydro"]
        recs = []
        for i in range(300):
            on = date(2015, 6, 1) + timedelta(days=rng.randrange(600))
            off = None if rng.random() < 0.6 else on + timedelta(days=rng.randrange(1, 400))
            recs.append(plant(i, rng.choice(nodes), rng.choice([None, rng.uniform(0.1, 50)]), on, off,
                              gross=rng.uniform(0.1, 50)))
        start, end = date(2016, 1, 1), date(2016, 12, 31)
        got = build_daily_capacity(recs, "wind", start, end, taxonomy).series.capacity
        want = daily_capacity(recs, taxonomy.subtree("wind"), start, end)
        assert list(got) == want
        rng.shuffle(recs)
        assert build_daily_capacity(recs, "wind", start, end, taxonomy).series.capacity == got
