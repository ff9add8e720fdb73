"""Power-plant lists: canonical records, list merging, cross-domain dedupe, plausibility rules.

Merging never guesses. A pair of records is fused only when each is the
other's single candidate under a matcher; everything else passes through
unchanged, and records involved in ambiguous candidate sets are reported
and marked.
"""

from __future__ import annotations

import json
import logging
import operator
import re
import unicodedata
from dataclasses import dataclass, field, fields, replace
from datetime import date, datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from gridforge.markers import AMBIGUOUS_MATCH, UNMAPPED_TERM, MarkerFlag
from gridforge.sources import Dialect, RawTable, parse_number
from gridforge.taxonomy import Domain, Taxonomy, UnresolvedDomain, UnmappedTerm, classify, domain_of

log = logging.getLogger(__name__)

COORD_PRECISIONS = ("exact", "zip_centroid", "district_centroid")
MATCHERS = ("eic", "name", "capacity")


@dataclass(frozen=True)
class PlantRecord:
    record_id: str
    name: str
    country: str
    source_node: str
    technology: Optional[str] = None
    capacity_net_mw: Optional[float] = None
    capacity_gross_mw: Optional[float] = None
    chp: Optional[bool] = None
    commissioned: Optional[date] = None
    decommissioned: Optional[date] = None
    lat: Optional[float] = None
    lon: Optional[float] = None
    coord_precision: Optional[str] = None
    eic: Optional[str] = None
    efficiency: Optional[float] = None
    provenance: tuple = ()
    markers: frozenset = frozenset()
    rule_ids: frozenset = frozenset()
    field_provenance: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def source(self) -> str:
        return self.provenance[0] if self.provenance else ""

    def donor(self, name: str) -> str:
        return self.field_provenance.get(name, self.source)


# fields that carry plant data (as opposed to bookkeeping)
DATA_FIELDS = tuple(f.name for f in fields(PlantRecord)
                    if f.name not in ("record_id", "provenance", "markers", "rule_ids", "field_provenance"))


@lru_cache(maxsize=1)
def legal_forms() -> frozenset:
    text = resources.files("gridforge").joinpath("data/legal_forms.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#"))


def _fold(s: str) -> str:
    s = unicodedata.normalize("NFKC", s).casefold()
    s = "".join(" " if unicodedata.category(ch)[0] in "PSZC" else ch for ch in s)
    return unicodedata.normalize("NFKC", s)


def normalize_name(name: str) -> str:
    """Case-folded, punctuation-free name without trailing legal-form tokens."""
    prev = None
    s = name
    # folding can expose new foldable characters; iterate to a fixed point
    while s != prev:
        prev = s
        s = _fold(s)
    tokens = s.split()
    forms = legal_forms()
    while tokens and tokens[-1] in forms:
        tokens.pop()
    return " ".join(tokens)


@dataclass(frozen=True)
class MatchPolicy:
    keys: tuple = ("eic", "name")
    tau: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "keys", tuple(self.keys))
        if not self.keys:
            raise ValueError("match policy needs at least one matcher")
        unknown = [k for k in self.keys if k not in MATCHERS]
        if unknown:
            raise ValueError(f"unknown matchers {unknown}; choose from {MATCHERS}")
        if not 0 < self.tau < 0.5:
            raise ValueError("tau must lie in (0, 0.5)")


def within(a: Optional[float], b: Optional[float], tau: float) -> bool:
    if a is None or b is None:
        return False
    return abs(a - b) <= tau * max(abs(a), abs(b))


def _eic_key(r: PlantRecord):
    return r.eic.strip().upper() if r.eic and r.eic.strip() else None


def _name_key(r: PlantRecord):
    name = normalize_name(r.name or "")
    return (name, r.country, r.source_node) if name else None


def candidates(matcher: str, left: Sequence[PlantRecord], right: Sequence[PlantRecord], tau: float) -> dict:
    """Map each index of ``left`` to the indices of ``right`` it matches under ``matcher``."""
    out: dict = {i: [] for i in range(len(left))}
    if matcher in ("eic", "name"):
        key = _eic_key if matcher == "eic" else _name_key
        index: dict = {}
        for j, r in enumerate(right):
            k = key(r)
            if k is not None:
                index.setdefault(k, []).append(j)
        for i, r in enumerate(left):
            k = key(r)
            if k is not None:
                out[i] = list(index.get(k, ()))
    else:
        blocks: dict = {}
        for j, r in enumerate(right):
            blocks.setdefault((r.country, r.source_node), []).append(j)
        for i, r in enumerate(left):
            out[i] = [j for j in blocks.get((r.country, r.source_node), ())
                      if within(r.capacity_net_mw, right[j].capacity_net_mw, tau)]
    return out


@dataclass
class MatchReport:
    matches: list = field(default_factory=list)     # {"primary", "secondary", "matcher"}
    conflicts: list = field(default_factory=list)   # {"record", "field", "kept", "discarded"}
    ambiguous: list = field(default_factory=list)   # {"list", "record", "matcher", "candidates"}

    def to_json(self) -> str:
        return json.dumps({"matches": self.matches, "conflicts": self.conflicts, "ambiguous": self.ambiguous},
                          indent=2, sort_keys=True, default=str) + "\n"


@dataclass
class MergeResult:
    records: list
    report: MatchReport


def _with_provenance(r: PlantRecord) -> PlantRecord:
    if r.field_provenance:
        return r
    donors = {name: r.source for name in DATA_FIELDS if getattr(r, name) is not None}
    return replace(r, field_provenance=donors)


def fuse(primary: PlantRecord, secondary: PlantRecord, report: Optional[MatchReport] = None) -> PlantRecord:
    """Primary values win; NA fields are filled from the secondary record."""
    primary, secondary = _with_provenance(primary), _with_provenance(secondary)
    updates = {}
    donors = dict(primary.field_provenance)
    for name in DATA_FIELDS:
        a, b = getattr(primary, name), getattr(secondary, name)
        if a is None and b is not None:
            updates[name] = b
            donors[name] = secondary.donor(name)
        elif a is not None and b is not None and a != b and report is not None:
            report.conflicts.append({"record": primary.record_id, "field": name, "kept": a, "discarded": b})
            log.info("conflict resolved", extra={"event": "conflict resolved", "record": primary.record_id,
                                                 "field": name, "kept": str(a), "discarded": str(b)})
    provenance = tuple(dict.fromkeys(primary.provenance + secondary.provenance))
    return replace(primary, **updates, provenance=provenance, field_provenance=donors,
                   markers=primary.markers | secondary.markers, rule_ids=primary.rule_ids | secondary.rule_ids)


def _order(r: PlantRecord):
    return (r.record_id, r.provenance, repr(r))


def merge_lists(primary: Sequence[PlantRecord], secondary: Sequence[PlantRecord],
                policy: MatchPolicy = MatchPolicy()) -> MergeResult:
    """Full outer merge of two plant lists describing the same fleet."""
    report = MatchReport()
    prim = sorted((_with_provenance(r) for r in primary), key=_order)
    sec = sorted((_with_provenance(r) for r in secondary), key=_order)
    open_p = set(range(len(prim)))
    open_s = set(range(len(sec)))
    pairs = []
    flagged_p: set = set()
    flagged_s: set = set()
    for matcher in policy.keys:
        p_idx = sorted(open_p)
        s_idx = sorted(open_s)
        fwd = candidates(matcher, [prim[i] for i in p_idx], [sec[j] for j in s_idx], policy.tau)
        fwd = {p_idx[a]: [s_idx[b] for b in bs] for a, bs in fwd.items()}
        back: dict = {}
        for i, js in fwd.items():
            for j in js:
                back.setdefault(j, []).append(i)
        for i, js in fwd.items():
            if len(js) == 1 and len(back[js[0]]) == 1:
                pairs.append((i, js[0], matcher))
                open_p.discard(i)
                open_s.discard(js[0])
        for i, js in fwd.items():
            if len(js) > 1:
                report.ambiguous.append({"list": "primary", "record": prim[i].record_id, "matcher": matcher,
                                         "candidates": sorted(sec[j].record_id for j in js)})
                flagged_p.add(i)
                flagged_s.update(js)
        for j, is_ in back.items():
            if len(is_) > 1:
                report.ambiguous.append({"list": "secondary", "record": sec[j].record_id, "matcher": matcher,
                                         "candidates": sorted(prim[i].record_id for i in is_)})
                flagged_s.add(j)
                flagged_p.update(is_)
        open_p -= flagged_p
        open_s -= flagged_s

    out = []
    matched_p = {i for i, _, _ in pairs}
    matched_s = {j for _, j, _ in pairs}
    for i, j, matcher in pairs:
        report.matches.append({"primary": prim[i].record_id, "secondary": sec[j].record_id, "matcher": matcher})
        out.append(fuse(prim[i], sec[j], report))
    mark = {MarkerFlag.IMPLAUSIBLE, AMBIGUOUS_MATCH}
    for i, r in enumerate(prim):
        if i not in matched_p:
            out.append(replace(r, markers=r.markers | mark) if i in flagged_p else r)
    for j, r in enumerate(sec):
        if j not in matched_s:
            out.append(replace(r, markers=r.markers | mark) if j in flagged_s else r)
    out.sort(key=_order)
    report.matches.sort(key=lambda m: (m["primary"], m["secondary"]))
    report.conflicts.sort(key=lambda c: (c["record"], c["field"]))
    report.ambiguous.sort(key=lambda a: (a["list"], a["record"], a["matcher"]))
    return MergeResult(out, report)


@dataclass
class OverlapReport:
    moved: list = field(default_factory=list)       # {"record", "from", "to"}
    overlaps: list = field(default_factory=list)    # {"conventional", "renewable", "reason"}
    unresolved: list = field(default_factory=list)  # record ids whose node spans both domains

    def to_json(self) -> str:
        return json.dumps({"moved": self.moved, "overlaps": self.overlaps, "unresolved": self.unresolved},
                          indent=2, sort_keys=True) + "\n"


@dataclass
class DedupeResult:
    conventional: list
    renewable: list
    report: OverlapReport


def dedupe_cross_domain(conventional: Sequence[PlantRecord], renewable: Sequence[PlantRecord], t: Taxonomy,
                        tau: float = 0.05) -> DedupeResult:
    """Put each record in its package domain and flag likely duplicates across the two lists."""
    report = OverlapReport()
    lists = {Domain.CONVENTIONAL: [], Domain.RENEWABLE: []}
    for home, records in ((Domain.CONVENTIONAL, conventional), (Domain.RENEWABLE, renewable)):
        for r in records:
            try:
                dom = domain_of(r.source_node, t)
            except UnresolvedDomain:
                report.unresolved.append(r.record_id)
                dom = home
            if dom != home:
                report.moved.append({"record": r.record_id, "from": home.value, "to": dom.value})
            lists[dom].append(r)
    conv, ren = lists[Domain.CONVENTIONAL], lists[Domain.RENEWABLE]

    eic_index: dict = {}
    name_index: dict = {}
    for j, r in enumerate(ren):
        if _eic_key(r):
            eic_index.setdefault(_eic_key(r), []).append(j)
        name = normalize_name(r.name or "")
        if name:
            name_index.setdefault((r.country, name), []).append(j)
    hit_c: set = set()
    hit_r: set = set()
    for i, r in enumerate(conv):
        found = {}
        for j in eic_index.get(_eic_key(r), ()) if _eic_key(r) else ():
            found[j] = "eic"
        name = normalize_name(r.name or "")
        for j in name_index.get((r.country, name), ()) if name else ():
            if j not in found and within(r.capacity_net_mw, ren[j].capacity_net_mw, tau):
                found[j] = "name_capacity"
        for j, reason in found.items():
            report.overlaps.append({"conventional": r.record_id, "renewable": ren[j].record_id, "reason": reason})
            hit_c.add(i)
            hit_r.add(j)

    def flag(records, hits):
        return [replace(r, markers=r.markers | {MarkerFlag.IMPLAUSIBLE},
                        rule_ids=r.rule_ids | {"cross_domain_duplicate"}) if k in hits else r
                for k, r in enumerate(records)]

    report.moved.sort(key=lambda m: m["record"])
    report.overlaps.sort(key=lambda o: (o["conventional"], o["renewable"]))
    report.unresolved.sort()
    return DedupeResult(flag(conv, hit_c), flag(ren, hit_r), report)


class RuleConfigError(ValueError):
    pass


_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True)
class Rule:
    """A record passes when ``record.field <op> value`` (or ``<op> record.other``) holds.

    ``node`` restricts the rule to a taxonomy subtree and ``technology`` to a
    technology label. Missing values never violate a rule.
    """

    id: str
    field: str
    op: str
    value: object = None
    other: Optional[str] = None
    node: Optional[str] = None
    technology: Optional[str] = None


def validate_rules(rules: Iterable[Rule], t: Optional[Taxonomy] = None) -> None:
    for rule in rules:
        if rule.field not in DATA_FIELDS:
            raise RuleConfigError(f"rule {rule.id!r} references unknown field {rule.field!r}")
        if rule.op not in _OPS:
            raise RuleConfigError(f"rule {rule.id!r} has unknown operator {rule.op!r}")
        if (rule.value is None) == (rule.other is None):
            raise RuleConfigError(f"rule {rule.id!r} needs exactly one of value/other")
        if rule.other is not None and rule.other not in DATA_FIELDS:
            raise RuleConfigError(f"rule {rule.id!r} references unknown field {rule.other!r}")
        if rule.node is not None:
            if t is None:
                raise RuleConfigError(f"rule {rule.id!r} is restricted to a node but no taxonomy was given")
            if rule.node not in t:
                raise RuleConfigError(f"rule {rule.id!r} references unknown node {rule.node!r}")


def load_rules(path=None) -> list:
    if path is None:
        text = resources.files("gridforge").joinpath("data/plant_rules.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    allowed = {"id", "field", "op", "value", "other", "node", "technology"}
    rules = []
    for item in json.loads(text):
        if set(item) - allowed:
            raise RuleConfigError(f"rule {item.get('id')!r} has unknown keys {sorted(set(item) - allowed)}")
        rules.append(Rule(**item))
    return rules


def _violates(rule: Rule, r: PlantRecord, subtree) -> bool:
    if subtree is not None and r.source_node not in subtree:
        return False
    if rule.technology is not None and (r.technology or "").casefold() != rule.technology.casefold():
        return False
    left = getattr(r, rule.field)
    right = getattr(r, rule.other) if rule.other is not None else rule.value
    if left is None or right is None:
        return False
    try:
        return not _OPS[rule.op](left, right)
    except TypeError:
        raise RuleConfigError(f"rule {rule.id!r} compares incompatible values {left!r} and {right!r}") from None


def flag_implausible(records: Iterable[PlantRecord], rules: Sequence[Rule], t: Optional[Taxonomy] = None) -> list:
    """Mark rule violations; values are never changed."""
    validate_rules(rules, t)
    subtrees = {rule.id: (t.subtree(rule.node) if rule.node is not None else None) for rule in rules}
    out = []
    for r in records:
        broken = frozenset(rule.id for rule in rules if _violates(rule, r, subtrees[rule.id]))
        if broken:
            r = replace(r, markers=r.markers | {MarkerFlag.IMPLAUSIBLE}, rule_ids=r.rule_ids | broken)
        out.append(r)
    return out


# -- reading plant lists from canonical tables ---------------------------------

_TRUE = {"true", "yes", "ja", "y", "1", "x"}
_FALSE = {"false", "no", "nein", "n", "0"}
_DATE_FORMATS = ("%Y-%m-%d", "%d.%m.%Y", "%d/%m/%Y")


def parse_bool(cell: Optional[str]) -> Optional[bool]:
    if cell is None:
        return None
    text = cell.strip().casefold()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {cell!r}")


def parse_date(cell: Optional[str]) -> Optional[date]:
    """ISO or day-first dates; a bare year is read as January 1st of that year."""
    if cell is None:
        return None
    text = cell.strip()
    if re.fullmatch(r"\d{4}", text):
        return date(int(text), 1, 1)
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    raise ValueError(f"not a date: {cell!r}")


_NUMERIC = ("capacity_net_mw", "capacity_gross_mw", "lat", "lon", "efficiency")


def records_from_table(table: RawTable, dialect: Dialect, mapping, t: Taxonomy, *, context: Optional[str] = None,
                       unmapped_node: Optional[str] = None) -> list:
    """Build plant records from a canonical table.

    The ``energy_source`` column is classified through ``mapping``. With
    ``unmapped_node`` set, unknown terms are routed there and marked instead
    of raising :class:`UnmappedTerm`.
    """
    cols = table.columns
    if "record_id" not in cols or "energy_source" not in cols:
        raise ValueError(f"{table.source_id}: plant tables need record_id and energy_source columns")
    known = set(DATA_FIELDS) | {"record_id", "energy_source"}
    extra = [c for c in cols if c not in known]
    if extra:
        raise ValueError(f"{table.source_id}: unknown plant columns {extra}")
    out = []
    for n, row in enumerate(table.rows):
        cell = dict(zip(cols, row))
        term = cell.pop("energy_source") or ""
        markers = set()
        try:
            node = classify(term, mapping, t, context=context)
        except UnmappedTerm:
            if unmapped_node is None:
                raise
            node = classify(term, mapping, t, context=context, default=unmapped_node)
            markers.add(UNMAPPED_TERM)
        kwargs: dict = {"record_id": cell.pop("record_id") or f"{table.source_id}:{n}", "source_node": node}
        for name, raw in cell.items():
            if name in _NUMERIC:
                kwargs[name] = parse_number(raw, dialect)
            elif name == "chp":
                kwargs[name] = parse_bool(raw)
            elif name in ("commissioned", "decommissioned"):
                kwargs[name] = parse_date(raw)
            else:
                kwargs[name] = raw
        kwargs.setdefault("name", "")
        kwargs.setdefault("country", "")
        if kwargs.get("coord_precision") not in (None, *COORD_PRECISIONS):
            raise ValueError(f"{table.source_id}: unknown coordinate precision {kwargs['coord_precision']!r}")
        out.append(PlantRecord(**kwargs, provenance=(table.source_id,), markers=frozenset(markers)))
    return out
