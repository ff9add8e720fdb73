"""Local wall-clock stamps to UTC.

Source files mostly report local time (CET/CEST). The spring transition skips
a local hour and the autumn one repeats it. Repeated stamps are resolved by
order of appearance: the first occurrence takes the pre-transition (summer)
offset, the second the post-transition one.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence
from zoneinfo import ZoneInfo

from gridforge.sources import check_timezone

UTC = timezone.utc

FOLD_POLICIES = ("order", "earlier", "later")


class TimestampError(ValueError):
    pass


class NonexistentLocalTime(TimestampError):
    def __init__(self, indices: Sequence[int], stamps: Sequence[datetime], zone: str):
        self.indices = list(indices)
        self.stamps = list(stamps)
        shown = ", ".join(s.isoformat(sep=" ") for s in self.stamps[:4])
        more = f" (+{len(self.stamps) - 4} more)" if len(self.stamps) > 4 else ""
        super().__init__(f"{len(self.stamps)} local times do not exist in {zone}: {shown}{more}")


class AmbiguityUnresolvable(TimestampError):
    def __init__(self, index: int, stamp: datetime):
        self.index = index
        self.stamp = stamp
        super().__init__(f"ambiguous local time {stamp.isoformat(sep=' ')} appears more than twice (row {index})")


class NonMonotoneOutput(TimestampError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"UTC instants not strictly increasing at position {index}")


@dataclass(frozen=True)
class LocalStampColumn:
    zone: str
    stamps: Sequence[datetime]  # naive local date-times in file order
    disambiguation: str = "order"

    def __post_init__(self):
        check_timezone(self.zone)
        if self.disambiguation not in FOLD_POLICIES:
            raise ValueError(f"disambiguation must be one of {FOLD_POLICIES}")


def _exists(naive: datetime, tz: ZoneInfo) -> bool:
    aware = naive.replace(tzinfo=tz)
    back = aware.astimezone(UTC).astimezone(tz).replace(tzinfo=None)
    return back == naive


def _is_ambiguous(naive: datetime, tz: ZoneInfo) -> bool:
    return naive.replace(tzinfo=tz, fold=0).utcoffset() != naive.replace(tzinfo=tz, fold=1).utcoffset()


def to_utc(col: LocalStampColumn) -> list:
    """Convert local stamps to strictly increasing aware UTC datetimes."""
    tz = ZoneInfo(col.zone)
    out = []
    missing_idx, missing = [], []
    seen: dict = {}
    for i, naive in enumerate(col.stamps):
        if naive.tzinfo is not None:
            raise TimestampError(f"stamp at row {i} already carries a timezone")
        if not _exists(naive, tz):
            missing_idx.append(i)
            missing.append(naive)
            continue
        fold = _fold_for(col.disambiguation, naive, seen, i) if _is_ambiguous(naive, tz) else 0
        out.append(naive.replace(tzinfo=tz, fold=fold).astimezone(UTC))
    if missing:
        raise NonexistentLocalTime(missing_idx, missing, col.zone)
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            raise NonMonotoneOutput(i)
    return out


def _fold_for(policy: str, naive: datetime, seen: dict, index: int) -> int:
    if policy == "earlier":
        return 0
    if policy == "later":
        return 1
    count = seen.get(naive, 0)
    if count >= 2:
        raise AmbiguityUnresolvable(index, naive)
    seen[naive] = count + 1
    return count


def from_utc(instants: Sequence[datetime], zone: str) -> list:
    """Naive local wall-clock stamps for aware instants (inverse of :func:`to_utc`)."""
    tz = ZoneInfo(zone)
    return [t.astimezone(tz).replace(tzinfo=None, fold=0) for t in instants]


def parse_stamps(cells: Sequence[str], fmt: str = "iso") -> list:
    """Parse timestamp strings; ``fmt`` is a strptime pattern or "iso"."""
    if fmt == "iso":
        out = []
        for c in cells:
            text = c.strip()
            if text.endswith("Z"):
                text = text[:-1] + "+00:00"
            out.append(datetime.fromisoformat(text))
        return out
    return [datetime.strptime(c.strip(), fmt) for c in cells]
