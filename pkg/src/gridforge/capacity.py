"""National generation capacity by source.

Observations from several statistics are kept side by side, one column per
source, and never reconciled. A reported zero and a missing value are
different things throughout: nothing here turns one into the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from gridforge.taxonomy import Taxonomy, ancestors


class DuplicateObservation(ValueError):
    def __init__(self, first: "CapacityObservation", second: "CapacityObservation"):
        self.first = first
        self.second = second
        super().__init__(f"duplicate observation for {first.key}: {first.value!r} and {second.value!r}")


@dataclass(frozen=True)
class CapacityObservation:
    country: str
    year: int
    node: str
    source: str
    value: Optional[float]  # GW; None when the source does not report it
    incomplete: bool = False  # set on sums missing components other sources report

    def __post_init__(self):
        if self.value is not None and not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"capacity must be a finite non-negative number, got {self.value!r}")

    @property
    def key(self) -> tuple:
        return (self.country, self.year, self.node, self.source)


@dataclass(frozen=True)
class CapacityMatrix:
    rows: tuple      # sorted (country, year, node)
    columns: tuple   # sorted source ids
    cells: dict      # (row, source) -> CapacityObservation, only where observed

    def get(self, row: tuple, source: str) -> Optional[float]:
        obs = self.cells.get((row, source))
        return None if obs is None else obs.value

    def observations(self) -> list:
        return [self.cells[k] for k in sorted(self.cells)]


def build_matrix(obs: Iterable[CapacityObservation]) -> CapacityMatrix:
    """Pivot observations into one row per (country, year, node) and one column per source."""
    cells: dict = {}
    for o in obs:
        k = ((o.country, o.year, o.node), o.source)
        if k in cells:
            raise DuplicateObservation(cells[k], o)
        cells[k] = o
    rows = tuple(sorted({r for r, _ in cells}))
    columns = tuple(sorted({s for _, s in cells}))
    return CapacityMatrix(rows, columns, cells)


def _present(o: CapacityObservation) -> bool:
    return o.value is not None


def roll_up(obs: Sequence[CapacityObservation], target_level: int, t: Taxonomy) -> list:
    """Sum observations up to the nodes of ``target_level``.

    For each target node and source, the topmost reported values inside the
    node's subtree are summed, so a source reporting both a total and its
    parts is not counted twice. A sum is flagged incomplete when another
    source reports a component this source does not cover, or when any
    summed input is itself incomplete. The sum is NA only when every input
    is NA.
    """
    if target_level not in (1, 2):
        raise ValueError("target_level must be 1 or 2")
    groups: dict = {}
    for o in obs:
        path = ancestors(o.node, t)
        if len(path) < target_level:
            raise ValueError(f"observation at {o.node!r} lies above level {target_level}")
        groups.setdefault((o.country, o.year, path[target_level - 1]), []).append((o, path))

    out = []
    for (country, year, target), members in sorted(groups.items()):
        by_source: dict = {}
        for o, path in members:
            by_source.setdefault(o.source, []).append((o, path))
        reported = {o.node for o, _ in members if _present(o)}
        for source in sorted(by_source):
            entries = by_source[source]
            mine = {o.node: (o, path) for o, path in entries if _present(o)}
            top = [o for o, path in mine.values()
                   if not any(a in mine for a in path[target_level - 1:-1])]
            covered = set()
            for o, path in mine.values():
                covered.add(o.node)
                covered.update(path[target_level - 1:])
            gaps = [n for n in reported if n not in covered and not _has_reported_ancestor(n, mine, t, target_level)]
            incomplete = bool(gaps) or any(o.incomplete for o in top)
            value = math.fsum(o.value for o in top) if top else None
            out.append(CapacityObservation(country, year, target, source, value, incomplete))
    return out


def _has_reported_ancestor(node: str, mine: dict, t: Taxonomy, target_level: int) -> bool:
    path = ancestors(node, t)
    return any(a in mine for a in path[target_level - 1:-1])


@dataclass
class RangeReport:
    country: str
    year: int
    totals: dict                       # source -> total GW or None
    incomplete: list = field(default_factory=list)
    min_total: Optional[float] = None
    max_total: Optional[float] = None

    @property
    def note(self) -> str:
        return "" if self.min_total is not None else "no complete totals"


class NoSuchCountryYear(KeyError):
    pass


def range_report(m: CapacityMatrix, country: str, year: int, t: Taxonomy) -> RangeReport:
    """Spread of total installed capacity across sources for one country and year."""
    obs = [o for o in m.observations() if o.country == country and o.year == year]
    if not obs:
        raise NoSuchCountryYear((country, year))
    level1 = roll_up(obs, 1, t)
    totals: dict = {}
    incomplete = set()
    roots_reported = {o.node for o in level1 if _present(o)}
    for source in sorted({o.source for o in level1}):
        mine = [o for o in level1 if o.source == source]
        present = [o for o in mine if _present(o)]
        totals[source] = math.fsum(o.value for o in present) if present else None
        if any(o.incomplete for o in mine) or roots_reported - {o.node for o in present} or not present:
            incomplete.add(source)
    complete = [totals[s] for s in totals if s not in incomplete]
    return RangeReport(country, year, totals, sorted(incomplete),
                       min(complete) if complete else None, max(complete) if complete else None)


def with_rollups(obs: Sequence[CapacityObservation], t: Taxonomy) -> list:
    """Observations plus level-2 and level-1 sums for keys no source reported directly."""
    direct = {o.key for o in obs}
    out = list(obs)
    for level in (2, 1):
        pool = [o for o in obs if t.node(o.node).level >= level]
        if not pool:
            continue
        out.extend(o for o in roll_up(pool, level, t) if o.key not in direct)
    return sorted(out, key=lambda o: o.key)
