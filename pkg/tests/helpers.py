"""Small packages and the mutations used to check that validation localizes damage."""

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

from gridforge.datapackage import FieldSchema, PackageMeta, Resource, version_stamp, with_markers, write_package
from gridforge.markers import MarkerFlag

T0 = datetime(2017, 1, 1, tzinfo=timezone.utc)
META = PackageMeta("sample", "1", datetime(2018, 3, 13, tzinfo=timezone.utc), title="Sample")

_schema, _companions = with_markers(
    [FieldSchema("utc_timestamp", "datetime"), FieldSchema("load", "number", unit="MW", constraints={"minimum": 0}),
     FieldSchema("price", "number", unit="EUR/MWh")], ["load"])
SERIES = Resource("series", "series.csv", _schema, _companions)
SITES = Resource("sites", "sites.csv", (FieldSchema("site", "string"), FieldSchema("units", "integer"),
                                        FieldSchema("active", "boolean")))


def series_rows(n: int):
    rows = []
    for i in range(n):
        load = None if i % 97 == 5 else 40000.0 + (i * 37 % 1000) / 8
        marker = {MarkerFlag.INTERPOLATED} if i % 50 == 3 else frozenset()
        rows.append((T0 + timedelta(hours=i), load, marker, -5.25 + (i % 13)))
    return rows


def make_package(pkg_dir, n: int = 24, registry=None) -> Path:
    pkg_dir = Path(pkg_dir)
    write_package(pkg_dir, [(SERIES, series_rows(n)), (SITES, [("a", 1, True), ("b", 2, False)])], META)
    version_stamp(pkg_dir, "1", registry or pkg_dir.parent / "versions.json")
    return pkg_dir


def _edit_cell(rel, row, col, text):
    def apply(pkg: Path):
        lines = (pkg / rel).read_text(encoding="utf-8").split("\n")
        cells = lines[row].split(",")
        cells[col - 1] = text
        lines[row] = ",".join(cells)
        (pkg / rel).write_text("\n".join(lines), encoding="utf-8", newline="")
    return apply


def _edit_line(rel, row, fn):
    def apply(pkg: Path):
        lines = (pkg / rel).read_text(encoding="utf-8").split("\n")
        lines[row] = fn(lines[row])
        (pkg / rel).write_text("\n".join(lines), encoding="utf-8", newline="")
    return apply


def _edit_descriptor(fn):
    def apply(pkg: Path):
        doc = json.loads((pkg / "datapackage.json").read_text(encoding="utf-8"))
        fn(doc)
        (pkg / "datapackage.json").write_text(json.dumps(doc), encoding="utf-8")
    return apply


def _write(rel, text):
    def apply(pkg: Path):
        (pkg / rel).write_text(text, encoding="utf-8")
    return apply


def _delete(rel):
    return lambda pkg: (pkg / rel).unlink()


def _set(path, value):
    def fn(doc):
        target = doc
        for k in path[:-1]:
            target = target[k]
        target[path[-1]] = value
    return fn


# (label, mutation, expected problem kind, resource, row, column); None means "not checked"
MUTATIONS = [
    ("number cell holds text", _edit_cell("series.csv", 3, 2, "lots"), "type", "series", 3, 2),
    ("value below minimum", _edit_cell("series.csv", 7, 2, "-1.0"), "constraint", "series", 7, 2),
    ("malformed datetime", _edit_cell("series.csv", 2, 1, "2017-01-01 01:00"), "type", "series", 2, 1),
    ("unknown marker flag", _edit_cell("series.csv", 4, 3, "tweaked"), "markers", "series", 4, 3),
    ("boolean spelled out", _edit_cell("sites.csv", 2, 3, "no"), "type", "sites", 2, 3),
    ("ragged row", _edit_line("series.csv", 5, lambda s: s + ",extra"), "row", "series", 5, None),
    ("header renamed", _edit_cell("series.csv", 0, 4, "cost"), "header", "series", 0, 4),
    ("valid edit breaks checksum", _edit_cell("series.csv", 9, 4, "1.5"), "checksum", "series", None, None),
    ("resource file deleted", _delete("sites.csv"), "missing", "sites", None, None),
    ("manifest tampered", _write("checksums.txt", "series.csv\tdeadbeef\n"), "manifest", None, None, None),
    ("descriptor unparseable", _write("datapackage.json", "{"), "descriptor", None, None, None),
    ("dangling marker companion", _edit_descriptor(_set(["gridforge", "marker_companions", "series"],
                                                        {"price": "price_marker"})), "markers", "series", None, None),
    ("unknown field type", _edit_descriptor(_set(["resources", 1, "schema", "fields", 1, "type"], "decimal")),
     "schema", "sites", None, None),
    ("resources list emptied", _edit_descriptor(_set(["resources"], [])), "descriptor", None, None, None),
]


def localized(problems, kind, resource, row, column) -> bool:
    """True when some problem has the expected kind and location."""
    for p in problems:
        if p.kind != kind:
            continue
        if resource is not None and p.resource != resource:
            continue
        if row is not None and p.row != row:
            continue
        if column is not None and p.column != column:
            continue
        return True
    return False
