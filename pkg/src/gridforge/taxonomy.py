"""Three-level classification of energy sources and technologies.

The tree and the source-vocabulary mappings are data files under
``gridforge/data``. The shipped tree is a constructed rendering: its first
level (renewable, fossil, nuclear, other or unspecified) and the bioenergy
third level follow the published classification, the remaining nodes carry a
``notes`` entry describing where they come from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

ROOT_IDS = frozenset({"renewable", "fossil", "nuclear", "other_or_unspecified"})
MAX_LEVEL = 3
BOTH = "both"


class Domain(str, Enum):
    CONVENTIONAL = "conventional"
    RENEWABLE = "renewable"

    def __str__(self) -> str:
        return self.value


class TaxonomyError(ValueError):
    def __init__(self, message: str, report: Iterable["Violation"] = ()):
        self.report = list(report)
        if self.report:
            message += ": " + "; ".join(str(v) for v in self.report)
        super().__init__(message)


class UnknownNode(KeyError):
    pass


class UnresolvedDomain(TaxonomyError):
    pass


class UnmappedTerm(LookupError):
    def __init__(self, term: str, mapping_id: str = ""):
        self.term = term
        self.mapping_id = mapping_id
        super().__init__(f"term {term!r} has no entry in mapping {mapping_id!r}")


@dataclass(frozen=True)
class TaxonomyNode:
    id: str
    label: str
    level: int
    parent: Optional[str] = None
    domain: Optional[str] = None  # "conventional", "renewable", "both" or None to inherit
    notes: str = ""


@dataclass(frozen=True)
class Violation:
    node_id: str
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.node_id or '<taxonomy>'}: {self.kind}: {self.message}"


@dataclass(frozen=True)
class Taxonomy:
    nodes: tuple

    @cached_property
    def _by_id(self) -> dict:
        index = {}
        for n in self.nodes:
            index.setdefault(n.id, n)
        return index

    @cached_property
    def _children(self) -> dict:
        kids: dict = {}
        for n in self.nodes:
            if n.parent is not None:
                kids.setdefault(n.parent, []).append(n.id)
        return kids

    def __contains__(self, node_id) -> bool:
        return node_id in self._by_id

    def node(self, node_id: str) -> TaxonomyNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def children(self, node_id: str) -> list:
        return list(self._children.get(node_id, ()))

    def is_leaf(self, node_id: str) -> bool:
        return not self._children.get(node_id)

    def leaves(self) -> list:
        return [n.id for n in self.nodes if self.is_leaf(n.id)]

    def at_level(self, level: int) -> list:
        return [n.id for n in self.nodes if n.level == level]

    def subtree(self, node_id: str) -> frozenset:
        """``node_id`` and all of its descendants."""
        self.node(node_id)
        seen = {node_id}
        stack = [node_id]
        while stack:
            for kid in self._children.get(stack.pop(), ()):
                if kid not in seen:
                    seen.add(kid)
                    stack.append(kid)
        return frozenset(seen)

    def ancestor_at(self, node_id: str, level: int) -> Optional[str]:
        path = ancestors(node_id, self)
        return path[level - 1] if len(path) >= level else None


def validate_taxonomy(t: Taxonomy) -> list:
    """List every structural problem of ``t``; an empty list means valid."""
    report = []
    seen: set = set()
    for n in t.nodes:
        if n.id in seen:
            report.append(Violation(n.id, "duplicate id", "node id appears more than once"))
        seen.add(n.id)
    by_id = {}
    for n in t.nodes:
        by_id.setdefault(n.id, n)

    for n in t.nodes:
        if not isinstance(n.level, int) or not 1 <= n.level <= MAX_LEVEL:
            report.append(Violation(n.id, "invalid level", f"level {n.level!r} outside 1..{MAX_LEVEL}"))
            continue
        if n.level == 1:
            if n.parent is not None:
                report.append(Violation(n.id, "root with parent", f"level-1 node has parent {n.parent!r}"))
            continue
        if n.parent is None:
            report.append(Violation(n.id, "missing parent", f"level-{n.level} node has no parent"))
        elif n.parent not in by_id:
            report.append(Violation(n.id, "unknown parent", f"parent {n.parent!r} does not exist"))
        elif by_id[n.parent].level != n.level - 1:
            report.append(Violation(
                n.id, "level skip", f"level {n.level} under parent {n.parent!r} of level {by_id[n.parent].level}"))

    cyclic: set = set()
    for n in t.nodes:
        trail = []
        cur: Optional[str] = n.id
        while cur is not None and cur in by_id:
            if cur in trail:
                loop = trail[trail.index(cur):]
                if not cyclic.intersection(loop):
                    report.append(Violation(cur, "cycle", " -> ".join(loop + [cur])))
                cyclic.update(loop)
                break
            trail.append(cur)
            cur = by_id[cur].parent

    roots = {n.id for n in t.nodes if n.level == 1}
    if roots != ROOT_IDS:
        missing = sorted(ROOT_IDS - roots)
        extra = sorted(roots - ROOT_IDS)
        report.append(Violation("", "roots", f"level-1 set must be {sorted(ROOT_IDS)}; missing {missing}, extra {extra}"))

    structural = {v.node_id for v in report}
    for n in t.nodes:
        if n.domain not in (None, BOTH, Domain.CONVENTIONAL.value, Domain.RENEWABLE.value):
            report.append(Violation(n.id, "invalid domain", f"domain {n.domain!r}"))
        elif n.id not in structural and n.id not in cyclic and t.is_leaf(n.id):
            if _resolve_domain(n.id, by_id) is None:
                report.append(Violation(n.id, "unresolved domain", "leaf does not resolve to exactly one package domain"))
    return report


def _resolve_domain(node_id: str, by_id: dict) -> Optional[Domain]:
    seen = set()
    cur: Optional[str] = node_id
    while cur is not None and cur in by_id and cur not in seen:
        seen.add(cur)
        dom = by_id[cur].domain
        if dom == BOTH:
            return None
        if dom is not None:
            try:
                return Domain(dom)
            except ValueError:
                return None
        cur = by_id[cur].parent
    return None


def ancestors(node_id: str, t: Taxonomy) -> list:
    """Path from the level-1 root down to ``node_id``."""
    path = [t.node(node_id).id]
    while True:
        parent = t.node(path[-1]).parent
        if parent is None:
            break
        if parent in path or len(path) > MAX_LEVEL:
            raise TaxonomyError(f"parent chain of {node_id!r} does not terminate at a root")
        path.append(parent)
    return path[::-1]


def domain_of(node_id: str, t: Taxonomy) -> Domain:
    t.node(node_id)
    dom = _resolve_domain(node_id, t._by_id)
    if dom is None:
        raise UnresolvedDomain(f"node {node_id!r} does not resolve to a single package domain")
    return dom


def taxonomy_from_json(data) -> Taxonomy:
    nodes = []
    for item in data:
        unknown = set(item) - {"id", "label", "level", "parent", "domain", "notes"}
        if unknown:
            raise TaxonomyError(f"node {item.get('id')!r} has unknown keys {sorted(unknown)}")
        nodes.append(TaxonomyNode(
            id=item["id"], label=item.get("label", item["id"]), level=item["level"],
            parent=item.get("parent"), domain=item.get("domain"), notes=item.get("notes", "")))
    return Taxonomy(tuple(nodes))


def load_taxonomy(path=None) -> Taxonomy:
    """Load and validate a taxonomy file (the shipped one by default)."""
    if path is None:
        text = resources.files("gridforge").joinpath("data/taxonomy.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    t = taxonomy_from_json(json.loads(text))
    report = validate_taxonomy(t)
    if report:
        raise TaxonomyError("invalid taxonomy", report)
    return t


def normalize_term(term: str) -> str:
    return " ".join(term.split()).casefold()


@dataclass(frozen=True)
class VocabMapping:
    id: str
    entries: dict = field(default_factory=dict)  # (normalized term, context or None) -> node id

    def lookup(self, term: str, context: Optional[str] = None) -> Optional[str]:
        key = normalize_term(term)
        if context is not None:
            hit = self.entries.get((key, normalize_term(context)))
            if hit is not None:
                return hit
        return self.entries.get((key, None))


def mapping_from_json(data: dict, t: Taxonomy) -> VocabMapping:
    if set(data) - {"id", "entries"}:
        raise TaxonomyError(f"mapping has unknown keys {sorted(set(data) - {'id', 'entries'})}")
    mapping_id = data["id"]
    entries: dict = {}
    problems = []
    for item in data["entries"]:
        ctx = item.get("context")
        key = (normalize_term(item["term"]), None if ctx is None else normalize_term(ctx))
        node = item["node"]
        if node not in t:
            problems.append(Violation(node, "unknown node", f"term {item['term']!r} maps to a missing node"))
        elif key in entries and entries[key] != node:
            problems.append(Violation(node, "conflict", f"term {item['term']!r} maps to {entries[key]!r} and {node!r}"))
        entries[key] = node
    if problems:
        raise TaxonomyError(f"mapping {mapping_id!r} is inconsistent with the taxonomy", problems)
    return VocabMapping(mapping_id, entries)


def load_mapping(ref, t: Taxonomy, search_dirs: Iterable = ()) -> VocabMapping:
    """Load a mapping by file path or by id from ``search_dirs`` and the shipped mappings."""
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        return mapping_from_json(json.loads(path.read_text(encoding="utf-8")), t)
    for d in search_dirs:
        candidate = Path(d) / f"{ref}.json"
        if candidate.exists():
            return mapping_from_json(json.loads(candidate.read_text(encoding="utf-8")), t)
    shipped = resources.files("gridforge").joinpath(f"data/mappings/{ref}.json")
    if shipped.is_file():
        return mapping_from_json(json.loads(shipped.read_text(encoding="utf-8")), t)
    raise FileNotFoundError(f"no vocabulary mapping {ref!r}")


def classify(term: str, mapping: VocabMapping, t: Taxonomy, context: Optional[str] = None,
             default: Optional[str] = None) -> str:
    """Node id for a source term.

    Unmapped terms raise :class:`UnmappedTerm` unless ``default`` names a
    node to route them to; callers doing so are expected to mark the value.
    """
    node = mapping.lookup(term, context)
    if node is None:
        if default is None:
            raise UnmappedTerm(normalize_term(term), mapping.id)
        node = default
    t.node(node)
    return node
