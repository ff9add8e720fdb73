"""Tabular Data Packages: CSV resources plus a ``datapackage.json`` descriptor.

Output is byte-deterministic: UTF-8, comma-delimited, LF line endings,
shortest round-trip number rendering, ISO 8601 UTC datetimes, empty cells for
missing values. Each changed or derived value is flagged in a companion
``<field>_marker`` column holding the sorted, semicolon-joined flag names.

Package-specific descriptor entries (content checksums, marker companions)
live under the ``gridforge`` key.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path, PurePosixPath
from typing import Iterable, Optional, Sequence

from filelock import FileLock

from gridforge.markers import parse_markers, render_markers
from gridforge.sources import write_rows

DESCRIPTOR = "datapackage.json"
MANIFEST = "checksums.txt"
EXT = "gridforge"
TYPES = ("string", "number", "integer", "boolean", "date", "datetime")
DATETIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")
_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATETIME = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")


class PackageError(ValueError):
    pass


class SchemaTypeError(PackageError):
    def __init__(self, row: int, column: int, name: str, message: str):
        self.row = row
        self.column = column
        self.name = name
        super().__init__(f"row {row}, column {column} ({name}): {message}")


class VersionImmutabilityError(PackageError):
    pass


@dataclass(frozen=True)
class FieldSchema:
    name: str
    type: str = "string"
    description: str = ""
    unit: Optional[str] = None
    constraints: Optional[dict] = None  # minimum, maximum, enum

    def __post_init__(self):
        if self.type not in TYPES:
            raise PackageError(f"field {self.name!r}: unknown type {self.type!r}")
        if self.constraints:
            unknown = set(self.constraints) - {"minimum", "maximum", "enum"}
            if unknown:
                raise PackageError(f"field {self.name!r}: unknown constraints {sorted(unknown)}")

    def to_json(self) -> dict:
        out: dict = {"name": self.name, "type": self.type}
        if self.description:
            out["description"] = self.description
        if self.unit:
            out["unit"] = self.unit
        if self.constraints:
            out["constraints"] = dict(self.constraints)
        return out


@dataclass(frozen=True)
class Resource:
    name: str
    path: str
    schema: tuple
    marker_companions: dict = field(default_factory=dict, hash=False)
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        names = [f.name for f in self.schema]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise PackageError(f"resource {self.name!r}: duplicate field names {dupes}")
        for data_field, marker in self.marker_companions.items():
            if data_field not in names or marker not in names:
                raise PackageError(f"resource {self.name!r}: marker companion {data_field!r} -> {marker!r} "
                                   f"refers to a field missing from the schema")
        check_resource_path(self.path)

    @property
    def field_names(self) -> list:
        return [f.name for f in self.schema]

    @property
    def marker_fields(self) -> set:
        return set(self.marker_companions.values())


def check_resource_path(path: str) -> None:
    p = PurePosixPath(path)
    if p.is_absolute() or ".." in p.parts or "\\" in path or not path:
        raise PackageError(f"resource path {path!r} must be relative and inside the package")


def with_markers(fields_: Iterable[FieldSchema], marked: Iterable[str]) -> tuple:
    """Schema with a ``<name>_marker`` string column after each field in ``marked``; returns (schema, companions)."""
    marked = set(marked)
    schema, companions = [], {}
    for f in fields_:
        schema.append(f)
        if f.name in marked:
            m = f"{f.name}_marker"
            schema.append(FieldSchema(m, "string", f"modification flags for {f.name}"))
            companions[f.name] = m
    return tuple(schema), companions


# -- cells ---------------------------------------------------------------------

def render_number(x) -> str:
    return repr(float(x))


def render_cell(value, f: FieldSchema, is_marker: bool = False) -> str:
    """Text for one cell; raises TypeError/ValueError on a value that does not fit the field type."""
    if value is None:
        return ""
    if is_marker:
        if isinstance(value, str):
            value = parse_markers(value)
        return render_markers(value)
    t = f.type
    if t == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ValueError(f"non-finite number {value!r}")
        return render_number(value)
    if t == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return str(value)
    if t == "boolean":
        if not isinstance(value, bool):
            raise TypeError(f"expected a boolean, got {value!r}")
        return "true" if value else "false"
    if t == "date":
        if isinstance(value, datetime) or not isinstance(value, date):
            raise TypeError(f"expected a date, got {value!r}")
        return value.isoformat()
    if t == "datetime":
        if not isinstance(value, datetime):
            raise TypeError(f"expected a datetime, got {value!r}")
        if value.tzinfo is None:
            raise ValueError("naive datetime; datetimes must be UTC")
        if value.microsecond:
            raise ValueError("sub-second datetimes are not representable")
        return value.astimezone(timezone.utc).strftime(DATETIME_FORMAT)
    if not isinstance(value, str):
        raise TypeError(f"expected a string, got {value!r}")
    return value


def parse_cell(text: str, f: FieldSchema, is_marker: bool = False):
    """Typed value of one cell; empty text is NA. Raises ValueError on malformed text."""
    if text == "":
        return frozenset() if is_marker else None
    if is_marker:
        return parse_markers(text)
    t = f.type
    if t == "number":
        if not _NUMBER.match(text):
            raise ValueError(f"{text!r} is not a number")
        return float(text)
    if t == "integer":
        if not _INTEGER.match(text):
            raise ValueError(f"{text!r} is not an integer")
        return int(text)
    if t == "boolean":
        if text not in ("true", "false"):
            raise ValueError(f"{text!r} is not a boolean")
        return text == "true"
    if t == "date":
        if not _DATE.match(text):
            raise ValueError(f"{text!r} is not a date (YYYY-MM-DD)")
        return date.fromisoformat(text)
    if t == "datetime":
        if not _DATETIME.match(text):
            raise ValueError(f"{text!r} is not a UTC datetime (YYYY-MM-DDTHH:MM:SSZ)")
        return datetime.strptime(text, DATETIME_FORMAT).replace(tzinfo=timezone.utc)
    return text


def check_constraints(value, f: FieldSchema) -> Optional[str]:
    c = f.constraints or {}
    if value is None:
        return None
    if "minimum" in c and value < c["minimum"]:
        return f"{value!r} is below the minimum {c['minimum']!r}"
    if "maximum" in c and value > c["maximum"]:
        return f"{value!r} is above the maximum {c['maximum']!r}"
    if "enum" in c and value not in c["enum"]:
        return f"{value!r} is not one of {c['enum']!r}"
    return None


def write_csv(resource: Resource, rows: Iterable[Sequence]) -> bytes:
    """Serialize rows (one value per schema field, in order) to canonical CSV bytes."""
    markers = resource.marker_fields
    width = len(resource.schema)
    lines = [resource.field_names]
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise SchemaTypeError(r, len(row), "", f"row has {len(row)} values, schema has {width} fields")
        cells = []
        for c, (value, f) in enumerate(zip(row, resource.schema), start=1):
            try:
                cells.append(render_cell(value, f, f.name in markers))
            except (TypeError, ValueError) as exc:
                raise SchemaTypeError(r, c, f.name, str(exc)) from None
        lines.append(cells)
    return write_rows(lines).encode("utf-8")


def _csv_records(data: bytes) -> list:
    text = data.decode("utf-8")
    return [rec for rec in csv.reader(io.StringIO(text, newline=""), strict=True) if rec]


def read_csv(resource: Resource, data: bytes) -> list:
    """Parse canonical CSV bytes back into typed rows; the inverse of :func:`write_csv`."""
    records = _csv_records(data)
    if not records or records[0] != resource.field_names:
        raise PackageError(f"resource {resource.name!r}: header does not match schema")
    markers = resource.marker_fields
    out = []
    for r, rec in enumerate(records[1:], start=1):
        if len(rec) != len(resource.schema):
            raise SchemaTypeError(r, len(rec), "", "wrong number of cells")
        row = []
        for c, (text, f) in enumerate(zip(rec, resource.schema), start=1):
            try:
                row.append(parse_cell(text, f, f.name in markers))
            except ValueError as exc:
                raise SchemaTypeError(r, c, f.name, str(exc)) from None
        out.append(tuple(row))
    return out


# -- descriptor ----------------------------------------------------------------

@dataclass(frozen=True)
class PackageMeta:
    name: str
    version: str
    created: datetime
    title: str = ""
    description: str = ""
    sources: tuple = ()        # (title, path or URL)
    contributors: tuple = ()   # names


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _resource_json(res: Resource, digest: Optional[str]) -> dict:
    out = {
        "name": res.name,
        "path": res.path,
        "profile": "tabular-data-resource",
        "format": "csv",
        "mediatype": "text/csv",
        "encoding": "utf-8",
        "dialect": {"delimiter": ",", "lineTerminator": "\n", "header": True, "doubleQuote": True},
        "schema": {"fields": [f.to_json() for f in res.schema], "missingValues": [""]},
    }
    if res.description:
        out["description"] = res.description
    if digest:
        out["hash"] = f"sha256:{digest}"
    return out


def build_descriptor(resources: Sequence[Resource], meta: PackageMeta, checksums: Optional[dict] = None) -> str:
    """Canonical ``datapackage.json`` text for ``resources``; ``checksums`` maps resource path to sha256."""
    if not resources:
        raise PackageError("package must contain at least one resource")
    names = [r.name for r in resources]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise PackageError(f"duplicate resource names {dupes}")
    checksums = checksums or {}
    if meta.created.tzinfo is None:
        raise PackageError("created must be an aware UTC datetime")
    doc = {
        "profile": "tabular-data-package",
        "name": meta.name,
        "version": meta.version,
        "created": meta.created.astimezone(timezone.utc).strftime(DATETIME_FORMAT),
        "resources": [_resource_json(r, checksums.get(r.path)) for r in resources],
        EXT: {
            "checksums": {r.path: checksums[r.path] for r in resources if r.path in checksums},
            "marker_companions": {r.name: dict(r.marker_companions) for r in resources if r.marker_companions},
        },
    }
    if meta.title:
        doc["title"] = meta.title
    if meta.description:
        doc["description"] = meta.description
    if meta.sources:
        doc["sources"] = [{"title": t, "path": p} for t, p in meta.sources]
    if meta.contributors:
        doc["contributors"] = [{"title": c} for c in meta.contributors]
    return canonical_json(doc)


def resources_from_descriptor(doc: dict) -> list:
    companions = doc.get(EXT, {}).get("marker_companions", {})
    out = []
    for item in doc["resources"]:
        schema = tuple(FieldSchema(f["name"], f.get("type", "string"), f.get("description", ""), f.get("unit"),
                                   f.get("constraints")) for f in item["schema"]["fields"])
        out.append(Resource(item["name"], item["path"], schema, dict(companions.get(item["name"], {})),
                            item.get("description", "")))
    return out


def write_package(pkg_dir, tables: Sequence[tuple], meta: PackageMeta) -> dict:
    """Write ``(resource, rows)`` pairs and the descriptor into ``pkg_dir``; returns resource checksums."""
    pkg_dir = Path(pkg_dir)
    pkg_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for res, rows in tables:
        data = write_csv(res, rows)
        target = pkg_dir / res.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        checksums[res.path] = sha256(data)
    text = build_descriptor([r for r, _ in tables], meta, checksums)
    (pkg_dir / DESCRIPTOR).write_bytes(text.encode("utf-8"))
    return checksums


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    kind: str
    message: str
    resource: Optional[str] = None
    row: Optional[int] = None      # 0 is the header, data rows count from 1
    column: Optional[int] = None   # 1-based
    field: Optional[str] = None

    def __str__(self) -> str:
        where = []
        if self.resource:
            where.append(f"resource {self.resource}")
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.column is not None:
            where.append(f"column {self.column}" + (f" ({self.field})" if self.field else ""))
        return f"[{self.kind}] " + (", ".join(where) + ": " if where else "") + self.message


def _load_descriptor(pkg_dir: Path, problems: list) -> Optional[dict]:
    path = pkg_dir / DESCRIPTOR
    if not path.is_file():
        problems.append(Problem("descriptor", f"{DESCRIPTOR} not found"))
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        problems.append(Problem("descriptor", f"{DESCRIPTOR} does not parse: {exc}"))
        return None
    if not isinstance(doc, dict):
        problems.append(Problem("descriptor", "descriptor is not a JSON object"))
        return None
    return doc


def _check_descriptor_shape(doc: dict, problems: list) -> bool:
    ok = True
    for key in ("name", "version", "resources"):
        if key not in doc:
            problems.append(Problem("descriptor", f"missing key {key!r}"))
            ok = False
    res = doc.get("resources")
    if not isinstance(res, list) or not res:
        problems.append(Problem("descriptor", "package must contain at least one resource"))
        return False
    names = []
    for k, item in enumerate(res):
        if not isinstance(item, dict) or not {"name", "path", "schema"} <= set(item):
            problems.append(Problem("descriptor", f"resource #{k} lacks name, path or schema"))
            ok = False
            continue
        names.append(item["name"])
        fields_ = item["schema"].get("fields") if isinstance(item["schema"], dict) else None
        if not isinstance(fields_, list) or not all(isinstance(f, dict) and "name" in f for f in fields_):
            problems.append(Problem("schema", "schema.fields must be a list of named fields", item["name"]))
            ok = False
    for n in sorted({n for n in names if names.count(n) > 1}):
        problems.append(Problem("descriptor", f"duplicate resource name {n!r}", n))
        ok = False
    return ok


def validate_package(pkg_dir) -> list:
    """Every conformance problem found in the package directory; empty when valid."""
    pkg_dir = Path(pkg_dir)
    problems: list = []
    doc = _load_descriptor(pkg_dir, problems)
    if doc is None or not _check_descriptor_shape(doc, problems):
        return problems
    ext = doc.get(EXT, {})
    checksums = ext.get("checksums", {})
    companions = ext.get("marker_companions", {})
    for name in sorted(set(companions) - {r["name"] for r in doc["resources"]}):
        problems.append(Problem("markers", "marker companions listed for an unknown resource", name))

    for item in doc["resources"]:
        try:
            res = Resource(item["name"], item["path"], tuple(
                FieldSchema(f["name"], f.get("type", "string"), f.get("description", ""), f.get("unit"),
                            f.get("constraints")) for f in item["schema"]["fields"]), {})
        except PackageError as exc:
            problems.append(Problem("schema", str(exc), item["name"]))
            continue
        comp = companions.get(res.name, {})
        names = res.field_names
        bad_comp = False
        for data_field, marker in sorted(comp.items()):
            if data_field not in names or marker not in names:
                problems.append(Problem("markers", f"marker companion {data_field!r} -> {marker!r} refers to a "
                                                   f"field missing from the schema", res.name))
                bad_comp = True
            elif marker == data_field or next(f for f in res.schema if f.name == marker).type != "string":
                problems.append(Problem("markers", f"marker field {marker!r} must be a separate string field",
                                        res.name))
                bad_comp = True
        if not bad_comp:
            res = Resource(res.name, res.path, res.schema, dict(comp))
        _validate_resource(pkg_dir, res, item, checksums, problems)
    _validate_manifest(pkg_dir, problems)
    return problems


def _validate_resource(pkg_dir: Path, res: Resource, item: dict, checksums: dict, problems: list) -> None:
    path = pkg_dir / res.path
    if not path.is_file():
        problems.append(Problem("missing", f"resource file {res.path} not found", res.name))
        return
    data = path.read_bytes()
    digest = sha256(data)
    if res.path not in checksums:
        problems.append(Problem("checksum", f"no checksum recorded for {res.path}", res.name))
    elif checksums[res.path] != digest:
        problems.append(Problem("checksum", f"checksum mismatch for {res.path}", res.name))
    if "hash" in item and item["hash"] != f"sha256:{digest}":
        problems.append(Problem("checksum", f"resource hash does not match {res.path}", res.name))
    try:
        records = _csv_records(data)
    except (UnicodeDecodeError, csv.Error) as exc:
        problems.append(Problem("format", f"not a readable UTF-8 CSV file: {exc}", res.name))
        return
    names = res.field_names
    header = records[0] if records else []
    for k in range(max(len(header), len(names))):
        got = header[k] if k < len(header) else None
        want = names[k] if k < len(names) else None
        if got != want:
            problems.append(Problem("header", f"header mismatch at column {k + 1}: expected {want!r}, found {got!r}",
                                    res.name, 0, k + 1, want))
    if header != names:
        return
    markers = res.marker_fields
    for r, rec in enumerate(records[1:], start=1):
        if len(rec) != len(names):
            problems.append(Problem("row", f"{len(rec)} cells, expected {len(names)}", res.name, r))
            continue
        for c, (text, f) in enumerate(zip(rec, res.schema), start=1):
            is_marker = f.name in markers
            try:
                value = parse_cell(text, f, is_marker)
            except ValueError as exc:
                kind = "markers" if is_marker else "type"
                problems.append(Problem(kind, str(exc), res.name, r, c, f.name))
                continue
            if not is_marker:
                msg = check_constraints(value, f)
                if msg:
                    problems.append(Problem("constraint", msg, res.name, r, c, f.name))


def _validate_manifest(pkg_dir: Path, problems: list) -> None:
    path = pkg_dir / MANIFEST
    if not path.exists():
        return
    listed = set()
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 2:
            problems.append(Problem("manifest", f"{MANIFEST} line {n} is malformed"))
            continue
        rel, digest = parts
        try:
            check_resource_path(rel)
        except PackageError:
            problems.append(Problem("manifest", f"{MANIFEST} line {n} points outside the package"))
            continue
        listed.add(rel)
        target = pkg_dir / rel
        if not target.is_file():
            problems.append(Problem("manifest", f"{MANIFEST} lists missing file {rel}"))
        elif sha256(target.read_bytes()) != digest:
            problems.append(Problem("manifest", f"{MANIFEST} digest mismatch for {rel}"))
    for rel in package_files(pkg_dir):
        if rel not in listed:
            problems.append(Problem("manifest", f"{rel} is not listed in {MANIFEST}"))


# -- versioning ----------------------------------------------------------------

@dataclass
class StampResult:
    identifier: str
    content_hash: str
    descriptor: str
    manifest: str
    new: bool


def package_files(pkg_dir: Path) -> list:
    return sorted(p.relative_to(pkg_dir).as_posix() for p in pkg_dir.rglob("*")
                  if p.is_file() and p.name != MANIFEST and not p.name.startswith("."))


def version_stamp(pkg_dir, version: str, registry=None) -> StampResult:
    """Record ``version`` in the descriptor, refresh checksums and write the manifest.

    The registry (``versions.json`` next to the package by default) maps
    ``name/version`` to the content hash. A version is write-once: stamping it
    again over identical content is a no-op, over changed content an error.
    """
    pkg_dir = Path(pkg_dir)
    registry = Path(registry) if registry else pkg_dir.parent / "versions.json"
    problems = [p for p in validate_package(pkg_dir) if p.kind not in ("checksum", "manifest")]
    if problems:
        raise PackageError("package does not validate: " + "; ".join(str(p) for p in problems[:5]))
    doc = json.loads((pkg_dir / DESCRIPTOR).read_text(encoding="utf-8"))
    doc["version"] = version
    sums = {}
    for item in doc["resources"]:
        digest = sha256((pkg_dir / item["path"]).read_bytes())
        item["hash"] = f"sha256:{digest}"
        sums[item["path"]] = digest
    doc.setdefault(EXT, {})["checksums"] = sums
    descriptor = canonical_json(doc)
    digests = {}
    for rel in package_files(pkg_dir):
        data = descriptor.encode("utf-8") if rel == DESCRIPTOR else (pkg_dir / rel).read_bytes()
        digests[rel] = sha256(data)
    manifest = "".join(f"{rel}\t{digests[rel]}\n" for rel in sorted(digests))
    content = sha256(manifest.encode("utf-8"))
    identifier = f"{doc['name']}/{version}"

    registry.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(registry) + ".lock"):
        stamps = json.loads(registry.read_text(encoding="utf-8")) if registry.exists() else {}
        known = stamps.get(identifier)
        if known is not None and known != content:
            raise VersionImmutabilityError(f"version immutability violated: {identifier} was stamped with "
                                           f"different content")
        (pkg_dir / DESCRIPTOR).write_text(descriptor, encoding="utf-8", newline="\n")
        (pkg_dir / MANIFEST).write_text(manifest, encoding="utf-8", newline="\n")
        if known is None:
            stamps[identifier] = content
            _atomic_write_text(registry, canonical_json(stamps))
    return StampResult(identifier, content, descriptor, manifest, known is None)


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def stamped_hash(registry, identifier: str) -> Optional[str]:
    registry = Path(registry)
    if not registry.exists():
        return None
    return json.loads(registry.read_text(encoding="utf-8")).get(identifier)
