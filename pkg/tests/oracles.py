"""Independent reference implementations used as test oracles.

Nothing here imports the package; each function computes its answer the
slow, obvious way.
"""

import math
from fractions import Fraction
from datetime import date, datetime, timedelta, timezone

UTC = timezone.utc


def last_sunday(year: int, month: int) -> date:
    d = date(year, month + 1, 1) - timedelta(days=1) if month < 12 else date(year, 12, 31)
    return d - timedelta(days=(d.weekday() - 6) % 7)


def berlin_offset(u: datetime) -> timedelta:
    """UTC offset of Central European time at instant ``u`` from the EU summer-time rule.

    Summer time runs from 01:00 UTC on the last Sunday of March to 01:00 UTC on
    the last Sunday of October (in force since 1996).
    """
    y = u.year
    start = datetime.combine(last_sunday(y, 3), datetime.min.time(), UTC) + timedelta(hours=1)
    end = datetime.combine(last_sunday(y, 10), datetime.min.time(), UTC) + timedelta(hours=1)
    return timedelta(hours=2) if start <= u < end else timedelta(hours=1)


def berlin_candidates(local: datetime) -> list:
    """All UTC instants that show ``local`` on a Berlin wall clock, earliest first."""
    out = []
    for h in (2, 1):
        u = (local - timedelta(hours=h)).replace(tzinfo=UTC)
        if u + berlin_offset(u) == local.replace(tzinfo=UTC):
            out.append(u)
    return out


def linear_fill(values, limit):
    """Brute-force gap filling in exact arithmetic: each NA position looks outward for its bounds."""
    n = len(values)
    out = list(values)
    filled = [False] * n
    for i in range(n):
        if values[i] is not None:
            continue
        lo = i
        while lo >= 0 and values[lo] is None:
            lo -= 1
        hi = i
        while hi < n and values[hi] is None:
            hi += 1
        if lo < 0 or hi >= n or hi - lo - 1 > limit:
            continue
        a, b = Fraction(values[lo]), Fraction(values[hi])
        out[i] = float(a + (b - a) * Fraction(i - lo, hi - lo))
        filled[i] = True
    return out, filled


def hourly_mean(values, k):
    out = []
    for h in range(0, len(values), k):
        chunk = values[h:h + k]
        out.append(None if any(v is None for v in chunk) else float(sum(map(Fraction, chunk)) / k))
    return out


def daily_capacity(records, members, start: date, end: date):
    """Per-day filter-and-sum over all records."""
    out = []
    d = start
    while d <= end:
        caps = []
        for r in records:
            cap = r.capacity_net_mw if r.capacity_net_mw is not None else r.capacity_gross_mw
            if r.source_node not in members or r.commissioned is None or cap is None:
                continue
            if r.commissioned <= d and (r.decommissioned is None or r.decommissioned > d):
                caps.append(cap)
        out.append(math.fsum(caps))
        d += timedelta(days=1)
    return out
