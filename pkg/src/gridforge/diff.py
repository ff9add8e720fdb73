"""Cell-level comparison of two package directories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from gridforge.datapackage import DESCRIPTOR, _csv_records


@dataclass(frozen=True)
class CellChange:
    row: int      # data row in the first package, from 1
    column: int   # 1-based position in the first package
    field: str
    old: str
    new: str


@dataclass
class ResourceDiff:
    name: str
    rows_added: int = 0
    rows_removed: int = 0
    cells: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.rows_added or self.rows_removed or self.cells)


@dataclass
class PackageDiff:
    schema: list = field(default_factory=list)     # (resource, description)
    resources: list = field(default_factory=list)  # ResourceDiff, only non-empty ones

    @property
    def empty(self) -> bool:
        return not self.schema and not self.resources

    def render(self) -> str:
        if self.empty:
            return "no differences\n"
        lines = [f"schema: resource {name}: {what}" for name, what in self.schema]
        for rd in self.resources:
            n = len(rd.cells)
            lines.append(f"resource {rd.name}: {n} cell{'s' if n != 1 else ''} changed, "
                         f"{rd.rows_added} rows added, {rd.rows_removed} rows removed")
            for c in rd.cells:
                lines.append(f"  row {c.row}, column {c.column} ({c.field}): {c.old!r} -> {c.new!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "schema": [{"resource": n, "change": w} for n, w in self.schema],
            "resources": [{"name": rd.name, "rows_added": rd.rows_added, "rows_removed": rd.rows_removed,
                           "cells": [vars(c) for c in rd.cells]} for rd in self.resources],
        }


def _load(pkg_dir: Path) -> dict:
    doc = json.loads((pkg_dir / DESCRIPTOR).read_text(encoding="utf-8"))
    return {r["name"]: r for r in doc["resources"]}


def _keyed(records: list) -> tuple:
    """Rows keyed by their first cell when that is unique, else by position."""
    body = records[1:]
    keys = [row[0] if row else "" for row in body]
    if len(set(keys)) == len(keys):
        return {k: (i, row) for i, (k, row) in enumerate(zip(keys, body), start=1)}, True
    return {i: (i, row) for i, row in enumerate(body, start=1)}, False


def diff_packages(a, b) -> PackageDiff:
    """Schema differences and changed, added and removed rows between packages ``a`` and ``b``."""
    a, b = Path(a), Path(b)
    ra, rb = _load(a), _load(b)
    out = PackageDiff()
    for name in sorted(set(rb) - set(ra)):
        out.schema.append((name, "added"))
    for name in sorted(set(ra) - set(rb)):
        out.schema.append((name, "removed"))
    for name in sorted(set(ra) & set(rb)):
        fa = {f["name"]: f.get("type", "string") for f in ra[name]["schema"]["fields"]}
        fb = {f["name"]: f.get("type", "string") for f in rb[name]["schema"]["fields"]}
        for f in [f for f in fb if f not in fa]:
            out.schema.append((name, f"field {f} added"))
        for f in [f for f in fa if f not in fb]:
            out.schema.append((name, f"field {f} removed"))
        for f in [f for f in fa if f in fb and fa[f] != fb[f]]:
            out.schema.append((name, f"field {f} type {fa[f]} -> {fb[f]}"))

        rec_a = _csv_records((a / ra[name]["path"]).read_bytes())
        rec_b = _csv_records((b / rb[name]["path"]).read_bytes())
        rows_a, by_key_a = _keyed(rec_a)
        rows_b, by_key_b = _keyed(rec_b)
        if by_key_a != by_key_b:
            rows_a = {i: (i, r) for i, r in enumerate(rec_a[1:], start=1)}
            rows_b = {i: (i, r) for i, r in enumerate(rec_b[1:], start=1)}
        head_a = rec_a[0] if rec_a else []
        head_b = rec_b[0] if rec_b else []
        shared = [(ca, head_b.index(f), f) for ca, f in enumerate(head_a) if f in head_b]
        rd = ResourceDiff(name, rows_added=len(set(rows_b) - set(rows_a)),
                          rows_removed=len(set(rows_a) - set(rows_b)))
        for key, (row_no, row) in rows_a.items():
            if key not in rows_b:
                continue
            other = rows_b[key][1]
            for ca, cb, f in shared:
                old = row[ca] if ca < len(row) else ""
                new = other[cb] if cb < len(other) else ""
                if old != new:
                    rd.cells.append(CellChange(row_no, ca + 1, f, old, new))
        if not rd.empty:
            out.resources.append(rd)
    return out
