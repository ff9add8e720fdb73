"""Fixed-resolution UTC series with per-point markers.

Timestamps are implied by ``start`` and ``resolution_minutes``; missing values
are ``None``. Operations return new series and only ever add markers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from gridforge.markers import NO_MARKERS, MarkerFlag, is_valid_flag, flag_name

UTC = timezone.utc
EPOCH = datetime(1970, 1, 1, tzinfo=UTC)
RESOLUTIONS = (15, 30, 60)
DEFAULT_MAX_GAP = timedelta(hours=2)
PROFILE_TOLERANCE = 0.02


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridViolation:
    index: int
    kind: str
    message: str


@dataclass(frozen=True)
class TimeSeries:
    series_id: str
    resolution_minutes: int
    start: datetime
    values: tuple
    markers: tuple = None  # one frozenset of flags per value

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.markers is None:
            object.__setattr__(self, "markers", (NO_MARKERS,) * len(self.values))
        else:
            object.__setattr__(self, "markers", tuple(frozenset(m) for m in self.markers))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def step(self) -> timedelta:
        return timedelta(minutes=self.resolution_minutes)

    def timestamp(self, i: int) -> datetime:
        return self.start + i * self.step

    def timestamps(self) -> list:
        return [self.start + i * self.step for i in range(len(self.values))]


def validate_grid(ts: TimeSeries) -> list:
    """Structural checks; the first violation of each kind is reported with its index."""
    report = []
    if ts.resolution_minutes not in RESOLUTIONS:
        report.append(GridViolation(0, "resolution", f"resolution {ts.resolution_minutes} not in {RESOLUTIONS}"))
    if ts.start.tzinfo is None or ts.start.utcoffset() != timedelta(0):
        report.append(GridViolation(0, "timezone", "start must be an aware UTC instant"))
    elif ts.resolution_minutes in RESOLUTIONS:
        offset = ts.start - EPOCH
        if offset % timedelta(minutes=ts.resolution_minutes):
            report.append(GridViolation(0, "alignment", f"start {ts.start.isoformat()} not aligned to "
                                                        f"{ts.resolution_minutes}-minute grid"))
    if len(ts.values) != len(ts.markers):
        k = min(len(ts.values), len(ts.markers))
        report.append(GridViolation(k, "length", f"{len(ts.values)} values but {len(ts.markers)} marker sets"))
    for i, v in enumerate(ts.values):
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v)):
            report.append(GridViolation(i, "value", f"value {v!r} is not a finite number or NA"))
            break
    for i, m in enumerate(ts.markers):
        bad = [f for f in m if not is_valid_flag(flag_name(f))]
        if bad:
            report.append(GridViolation(i, "marker", f"unknown marker flags {bad}"))
            break
    return report


def _require_valid(ts: TimeSeries) -> None:
    report = validate_grid(ts)
    if report:
        v = report[0]
        raise GridError(f"{ts.series_id}: invalid grid at index {v.index}: {v.message}")


def na_runs(values: Sequence) -> list:
    """Maximal runs of missing values as (start, stop) index pairs."""
    runs = []
    i, n = 0, len(values)
    while i < n:
        if values[i] is None:
            j = i
            while j < n and values[j] is None:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def fill_gaps(ts: TimeSeries, max_gap: timedelta = DEFAULT_MAX_GAP) -> TimeSeries:
    """Linearly interpolate interior NA-runs no longer than ``max_gap``.

    Runs touching either end of the series and longer runs are left as they
    are. Filled points gain ``interpolated``.
    """
    _require_valid(ts)
    if max_gap < timedelta(0) or max_gap % ts.step:
        raise GridError(f"max_gap {max_gap} is not a non-negative multiple of {ts.resolution_minutes} minutes")
    limit = max_gap // ts.step
    if limit == 0:
        return ts
    values = list(ts.values)
    markers = list(ts.markers)
    for lo, hi in na_runs(values):
        n = hi - lo
        if lo == 0 or hi == len(values) or n > limit:
            continue
        # exact rational line, rounded once, so each value is the nearest float
        left, right = Fraction(values[lo - 1]), Fraction(values[hi])
        for k in range(1, n + 1):
            values[lo + k - 1] = float(left + (right - left) * Fraction(k, n + 1))
            markers[lo + k - 1] = markers[lo + k - 1] | {MarkerFlag.INTERPOLATED}
    return replace(ts, values=tuple(values), markers=tuple(markers))


def aggregate_to_hourly(ts: TimeSeries) -> TimeSeries:
    """Hourly means of a 15- or 30-minute series; any missing constituent makes the hour missing."""
    _require_valid(ts)
    if ts.resolution_minutes == 60:
        raise GridError(f"{ts.series_id}: series is already hourly")
    if (ts.start - EPOCH) % timedelta(hours=1):
        raise GridError(f"{ts.series_id}: start {ts.start.isoformat()} is not on a full hour")
    k = 60 // ts.resolution_minutes
    if len(ts.values) % k:
        raise GridError(f"{ts.series_id}: {len(ts.values)} values do not fill whole hours of {k}")
    values, markers = [], []
    for h in range(0, len(ts.values), k):
        chunk = ts.values[h:h + k]
        if any(v is None for v in chunk):
            values.append(None)
        else:
            values.append(math.fsum(chunk) / k)
        markers.append(frozenset().union(*ts.markers[h:h + k]) | {MarkerFlag.OWN_CALCULATION})
    return TimeSeries(ts.series_id, 60, ts.start, tuple(values), tuple(markers))


def series_from_points(series_id: str, instants: Sequence[datetime], values: Sequence[Optional[float]],
                       resolution_minutes: int, start: Optional[datetime] = None,
                       end: Optional[datetime] = None) -> TimeSeries:
    """Place (instant, value) points onto a complete grid; grid slots without a point are NA.

    ``end`` is exclusive. Both bounds default to the span of the points.
    """
    if len(instants) != len(values):
        raise GridError("instants and values differ in length")
    step = timedelta(minutes=resolution_minutes)
    if start is None:
        if not instants:
            raise GridError("cannot infer the start of an empty series")
        start = instants[0]
    if end is None:
        end = (instants[-1] + step) if instants else start
    n = (end - start) // step
    grid: list = [None] * n
    filled = [False] * n
    for t, v in zip(instants, values):
        offset = t - start
        if offset % step:
            raise GridError(f"{series_id}: {t.isoformat()} is off the {resolution_minutes}-minute grid")
        i = offset // step
        if not 0 <= i < n:
            continue
        if filled[i]:
            raise GridError(f"{series_id}: duplicate point at {t.isoformat()}")
        grid[i] = v
        filled[i] = True
    ts = TimeSeries(series_id, resolution_minutes, start, tuple(grid))
    _require_valid(ts)
    return ts


@dataclass(frozen=True)
class DailyCapacitySeries:
    grouping: str
    start: date
    capacity: tuple  # MW per consecutive day from ``start``

    @property
    def dates(self) -> list:
        return [self.start + timedelta(days=i) for i in range(len(self.capacity))]

    def on(self, day: date) -> Optional[float]:
        i = (day - self.start).days
        if 0 <= i < len(self.capacity):
            return self.capacity[i]
        return None


class CapacityError(ValueError):
    pass


def capacity_profile(generation: TimeSeries, cap: DailyCapacitySeries,
                     tolerance: float = PROFILE_TOLERANCE) -> TimeSeries:
    """Generation divided by the installed capacity of the same UTC day.

    Every point gains ``own_calculation``; ratios above ``1 + tolerance`` also
    gain ``implausible`` and are kept as they are.
    """
    _require_valid(generation)
    values, markers = [], []
    checked: dict = {}
    for i, (g, m) in enumerate(zip(generation.values, generation.markers)):
        day = generation.timestamp(i).date()
        c = checked.get(day)
        if c is None:
            c = cap.on(day)
            if c is None or c <= 0:
                raise CapacityError(f"{generation.series_id}: no positive installed capacity for {day}")
            checked[day] = c
        flags = m | {MarkerFlag.OWN_CALCULATION}
        if g is None:
            values.append(None)
        else:
            ratio = g / c
            if ratio > 1.0 + tolerance:
                flags = flags | {MarkerFlag.IMPLAUSIBLE}
            values.append(ratio)
        markers.append(flags)
    return TimeSeries(f"{generation.series_id}_profile", generation.resolution_minutes,
                      generation.start, tuple(values), tuple(markers))


def record_capacity(record) -> Optional[float]:
    """Capacity counted for a plant: net if reported, gross otherwise."""
    if record.capacity_net_mw is not None:
        return record.capacity_net_mw
    return record.capacity_gross_mw


@dataclass
class DailyCapacityResult:
    series: DailyCapacitySeries
    excluded: list = field(default_factory=list)  # record ids lacking a commissioning date or capacity


def build_daily_capacity(records: Iterable, grouping: str, start: date, end: date, taxonomy) -> DailyCapacityResult:
    """Installed capacity per day in ``[start, end]`` for plants within ``grouping``'s subtree.

    A plant counts from its commissioning day up to the day before its
    decommissioning day. Sums are exact (accumulated as fractions) so the
    result does not depend on record order.
    """
    if end < start:
        raise ValueError("end precedes start")
    members = taxonomy.subtree(grouping)
    n_days = (end - start).days + 1
    deltas = [Fraction(0)] * (n_days + 1)
    excluded = []
    for r in records:
        if r.source_node not in members:
            continue
        cap = record_capacity(r)
        if r.commissioned is None or cap is None:
            excluded.append(r.record_id)
            continue
        on = max((r.commissioned - start).days, 0)
        off = n_days if r.decommissioned is None else min((r.decommissioned - start).days, n_days)
        if on >= n_days or off <= on:
            continue
        deltas[on] += Fraction(cap)
        deltas[off] -= Fraction(cap)
    running = Fraction(0)
    capacity = []
    for d in range(n_days):
        running += deltas[d]
        capacity.append(float(running))
    return DailyCapacityResult(DailyCapacitySeries(grouping, start, tuple(capacity)), sorted(excluded))
