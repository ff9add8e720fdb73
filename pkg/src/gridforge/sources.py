"""Dialect-aware ingestion of raw source tables.

A source is described declaratively by a JSON descriptor: where the original
file lives, how it is formatted, which of its columns are kept and under which
canonical names. Parsing never coerces cell contents; numbers are normalized
separately by :func:`parse_number` so that a reported zero and a missing
value stay distinguishable.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

ENCODINGS = {"utf-8": "utf-8", "utf8": "utf-8", "latin-1": "latin-1", "latin1": "latin-1", "iso-8859-1": "latin-1"}

_DESCRIPTOR_KEYS = {"id", "origin", "dialect", "column_map", "vocab_map_id", "timezone", "notes"}
_DIALECT_KEYS = {"delimiter", "decimal_separator", "thousands_separator", "encoding", "header_rows", "na_tokens"}
_NUMERAL = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")


class DescriptorError(ValueError):
    """Invalid source descriptor; ``context`` names the offending field or line."""

    def __init__(self, message: str, context: str = ""):
        self.context = context
        super().__init__(f"{context}: {message}" if context else message)


class TableParseError(ValueError):
    def __init__(self, message: str, *, row: Optional[int] = None, offset: Optional[int] = None):
        self.row = row
        self.offset = offset
        super().__init__(message)


class NumberParseError(ValueError):
    def __init__(self, cell: str):
        self.cell = cell
        super().__init__(f"not a number: {cell!r}")


@dataclass(frozen=True)
class Dialect:
    delimiter: str = ","
    decimal_separator: str = "."
    thousands_separator: Optional[str] = None
    encoding: str = "utf-8"
    header_rows: int = 1
    na_tokens: frozenset = frozenset({""})

    def __post_init__(self):
        if len(self.delimiter) != 1:
            raise DescriptorError("delimiter must be a single character", "dialect.delimiter")
        if self.decimal_separator not in (".", ","):
            raise DescriptorError("decimal separator must be '.' or ','", "dialect.decimal_separator")
        if self.delimiter == self.decimal_separator:
            raise DescriptorError("delimiter equals decimal separator", "dialect")
        if self.thousands_separator is not None:
            if len(self.thousands_separator) != 1:
                raise DescriptorError("thousands separator must be a single character", "dialect.thousands_separator")
            if self.thousands_separator == self.decimal_separator:
                raise DescriptorError("thousands separator equals decimal separator", "dialect")
        if self.encoding.lower() not in ENCODINGS:
            raise DescriptorError(f"unsupported encoding {self.encoding!r}", "dialect.encoding")
        object.__setattr__(self, "encoding", ENCODINGS[self.encoding.lower()])
        if not isinstance(self.header_rows, int) or isinstance(self.header_rows, bool) or self.header_rows < 0:
            raise DescriptorError("header_rows must be a non-negative integer", "dialect.header_rows")
        object.__setattr__(self, "na_tokens", frozenset(self.na_tokens))


@dataclass(frozen=True)
class SourceDescriptor:
    id: str
    origin: str
    dialect: Dialect = field(default_factory=Dialect)
    column_map: tuple = ()
    vocab_map_id: Optional[str] = None
    timezone: str = "UTC"
    notes: str = ""
    # directory of the descriptor file, used to resolve relative origins
    base_dir: Optional[Path] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.id:
            raise DescriptorError("id must be non-empty", "id")
        pairs = tuple(tuple(p) for p in self.column_map)
        for p in pairs:
            if len(p) != 2 or not all(isinstance(x, str) and x for x in p):
                raise DescriptorError(f"column_map entry {list(p)!r} is not a [source, canonical] pair", "column_map")
        canonical = [p[1] for p in pairs]
        dupes = sorted({c for c in canonical if canonical.count(c) > 1})
        if dupes:
            raise DescriptorError(f"duplicate canonical columns {dupes}", "column_map")
        object.__setattr__(self, "column_map", pairs)
        check_timezone(self.timezone)

    def resolve_origin(self) -> str:
        if "://" in self.origin or self.base_dir is None:
            return self.origin
        return str((self.base_dir / self.origin).resolve())


def check_timezone(name: str) -> ZoneInfo:
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError, TypeError):
        raise DescriptorError(f"unknown timezone {name!r}", "timezone") from None


@dataclass(frozen=True)
class RawTable:
    columns: tuple
    rows: list
    source_id: str = ""

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise TableParseError(f"row {i} has {len(row)} cells, expected {width}", row=i)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [row[k] for row in self.rows]


def dialect_from_dict(data: dict) -> Dialect:
    unknown = sorted(set(data) - _DIALECT_KEYS)
    if unknown:
        raise DescriptorError(f"unknown keys {unknown}", "dialect")
    kwargs = dict(data)
    if "na_tokens" in kwargs:
        tokens = kwargs["na_tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DescriptorError("na_tokens must be a list of strings", "dialect.na_tokens")
        kwargs["na_tokens"] = frozenset(tokens)
    for key in ("delimiter", "decimal_separator", "encoding"):
        if key in kwargs and not isinstance(kwargs[key], str):
            raise DescriptorError("must be a string", f"dialect.{key}")
    return Dialect(**kwargs)


def descriptor_from_dict(data: dict, base_dir: Optional[Path] = None) -> SourceDescriptor:
    if not isinstance(data, dict):
        raise DescriptorError("descriptor must be a JSON object")
    unknown = sorted(set(data) - _DESCRIPTOR_KEYS)
    if unknown:
        raise DescriptorError(f"unknown keys {unknown}")
    for key in ("id", "origin"):
        if not isinstance(data.get(key), str):
            raise DescriptorError("required string field missing", key)
    dialect = data.get("dialect", {})
    if not isinstance(dialect, dict):
        raise DescriptorError("must be an object", "dialect")
    column_map = data.get("column_map", [])
    if not isinstance(column_map, list):
        raise DescriptorError("must be a list of [source, canonical] pairs", "column_map")
    return SourceDescriptor(
        id=data["id"],
        origin=data["origin"],
        dialect=dialect_from_dict(dialect),
        column_map=tuple(tuple(p) if isinstance(p, list) else (p,) for p in column_map),
        vocab_map_id=data.get("vocab_map_id"),
        timezone=data.get("timezone", "UTC"),
        notes=data.get("notes", ""),
        base_dir=base_dir,
    )


def load_descriptor(path) -> SourceDescriptor:
    """Read and fully validate a JSON source descriptor."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptorError(exc.msg, f"{path.name} line {exc.lineno} column {exc.colno}") from None
    try:
        return descriptor_from_dict(data, base_dir=path.parent)
    except DescriptorError as exc:
        raise DescriptorError(str(exc), path.name) from None


def _decode(data: bytes, encoding: str) -> str:
    try:
        return data.decode(encoding)
    except UnicodeDecodeError as exc:
        raise TableParseError(f"cannot decode byte at offset {exc.start} as {encoding}", offset=exc.start) from None


def parse_table(data: bytes, dialect: Dialect, column_map: Sequence = (), source_id: str = "") -> RawTable:
    """Split raw bytes into a rectangular table of optional strings.

    The last header row supplies the source column names; earlier header rows
    are treated as preamble. Without header rows the source columns are named
    by position ("0", "1", ...). An empty ``column_map`` keeps every column
    under its source name. Blank lines are skipped.
    """
    text = _decode(data, dialect.encoding)
    if text.startswith("\ufeff"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""), delimiter=dialect.delimiter, quotechar='"', strict=True)
    records = []
    try:
        for rec in reader:
            if rec:
                records.append(rec)
    except csv.Error as exc:
        raise TableParseError(f"malformed CSV: {exc}", row=reader.line_num) from None

    n_head = dialect.header_rows
    if len(records) < n_head:
        raise TableParseError(f"expected {n_head} header rows, found {len(records)}", row=len(records))
    body = records[n_head:]
    if n_head:
        header = records[n_head - 1]
    else:
        header = [str(i) for i in range(len(body[0]) if body else 0)]

    width = len(header)
    for i, rec in enumerate(body):
        if len(rec) != width:
            raise TableParseError(
                f"ragged row {n_head + i}: {len(rec)} cells, header has {width}", row=n_head + i)

    if column_map:
        index = {}
        for k, name in enumerate(header):
            index.setdefault(name.strip(), k)
        missing = [src for src, _ in column_map if src not in index]
        if missing:
            raise TableParseError(f"mapped columns missing from header: {missing}")
        picks = [index[src] for src, _ in column_map]
        columns = tuple(dst for _, dst in column_map)
    else:
        picks = list(range(width))
        columns = tuple(header)

    na = dialect.na_tokens
    rows = [tuple(None if rec[k] in na else rec[k] for k in picks) for rec in body]
    return RawTable(columns=columns, rows=rows, source_id=source_id)


def serialize_table(table: RawTable, dialect: Dialect) -> bytes:
    """Render a table back into ``dialect``; inverse of :func:`parse_table` with an empty column map."""
    if any(cell is None for row in table.rows for cell in row):
        if not dialect.na_tokens:
            raise ValueError("dialect has no NA token to render missing cells")
    na_token = min(dialect.na_tokens, key=lambda t: (len(t), t)) if dialect.na_tokens else ""
    if dialect.header_rows == 0:
        if list(table.columns) != [str(i) for i in range(len(table.columns))]:
            raise ValueError("tables without header rows must use positional column names")
    lines = [table.columns] * dialect.header_rows
    lines += [[na_token if c is None else c for c in row] for row in table.rows]
    return write_rows(lines, dialect.delimiter).encode(dialect.encoding)


def write_rows(rows: Iterable[Sequence[str]], delimiter: str = ",") -> str:
    """CSV-render string rows with LF line endings so that any cell content reads back intact."""
    buf = io.StringIO(newline="")
    minimal = csv.writer(buf, delimiter=delimiter, quotechar='"', lineterminator="\n")
    full = csv.writer(buf, delimiter=delimiter, quotechar='"', lineterminator="\n", quoting=csv.QUOTE_ALL)
    for row in rows:
        if len(row) == 1 and row[0] == "":
            # a lone empty field would read back as a blank line
            buf.write('""\n')
        elif any("\r" in cell for cell in row):
            full.writerow(row)
        else:
            minimal.writerow(row)
    return buf.getvalue()


def parse_number(cell: Optional[str], dialect: Dialect) -> Optional[float]:
    """Normalize a locale-formatted numeral; NA stays NA and "0" is 0.0."""
    if cell is None:
        return None
    text = cell.strip()
    if dialect.thousands_separator:
        text = text.replace(dialect.thousands_separator, "")
    if dialect.decimal_separator != ".":
        if "." in text:
            raise NumberParseError(cell)
        text = text.replace(dialect.decimal_separator, ".")
    if not _NUMERAL.match(text):
        raise NumberParseError(cell)
    return float(text)


def parse_numbers(cells: Iterable[Optional[str]], dialect: Dialect) -> list:
    return [parse_number(c, dialect) for c in cells]
