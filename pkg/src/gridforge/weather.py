"""Gridded reanalysis fields: subsetting, wind speed, flattening to rows.

Fields live on a regular lon/lat grid. ``lon0``/``lat0`` is the centre of the
south-western cell; row ``j`` of a value array is latitude ``lat0 + j*dlat``
and column ``i`` is longitude ``lon0 + i*dlon``. Missing values are NaN.

Grid container format (JSON, one file)::

    {"format": "gridforge-grid/1",
     "grid": {"lon0": 5.625, "lat0": 47.0, "dlon": 0.625, "dlat": 0.5, "nx": 4, "ny": 3},
     "fields": [{"parameter": "wind_u_10m", "time": "2016-01-01T00:00:00Z",
                 "values": [[...nx values for lat0...], ..., [...for the northernmost row...]]}]}

``null`` marks a missing value.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT = "gridforge-grid/1"
EDGE_EPS = 1e-9  # degrees; absorbs float noise when a box edge sits on a cell centre

UNITS = {
    "wind_u_2m": "m/s", "wind_u_10m": "m/s", "wind_u_50m": "m/s",
    "wind_v_2m": "m/s", "wind_v_10m": "m/s", "wind_v_50m": "m/s",
    "wind_speed_2m": "m/s", "wind_speed_10m": "m/s", "wind_speed_50m": "m/s",
    "roughness_length": "m",
    "solar_radiation": "W/m2",
    "temperature": "K",
    "air_density": "kg/m3",
    "pressure": "Pa",
}
PARAMETERS = tuple(UNITS)
_WIND = re.compile(r"^wind_([uv])_(\d+m)$")


class GridFormatError(ValueError):
    pass


class EmptyIntersection(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lon0: float
    lat0: float
    nx: int
    ny: int
    dlon: float = 0.625
    dlat: float = 0.5

    def __post_init__(self):
        if not (self.dlon > 0 and self.dlat > 0):
            raise ValueError("grid spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell in each direction")

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    def lons(self) -> np.ndarray:
        return self.lon0 + np.arange(self.nx) * self.dlon

    def lats(self) -> np.ndarray:
        return self.lat0 + np.arange(self.ny) * self.dlat


@dataclass(frozen=True)
class BoundingBox:
    ne: tuple  # (lat, lon)
    sw: tuple  # (lat, lon)

    def __post_init__(self):
        if self.ne[0] < self.sw[0] or self.ne[1] < self.sw[1]:
            raise ValueError("north-east corner must not lie south or west of the south-west corner")


@dataclass(frozen=True, eq=False)
class GridField:
    parameter: str
    time: datetime
    values: np.ndarray

    def __post_init__(self):
        if self.parameter not in UNITS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if self.time.tzinfo is None:
            raise ValueError("field time must be timezone-aware UTC")
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise ValueError("field values must be two-dimensional (ny, nx)")
        object.__setattr__(self, "values", arr)

    @property
    def unit(self) -> str:
        return UNITS[self.parameter]

    def same_as(self, other: "GridField") -> bool:
        return (self.parameter == other.parameter and self.time == other.time
                and self.values.shape == other.values.shape
                and np.array_equal(self.values, other.values, equal_nan=True))


def _check_shape(f: GridField, spec: GridSpec) -> None:
    if f.values.shape != spec.shape:
        raise ValueError(f"{f.parameter} at {f.time.isoformat()}: shape {f.values.shape} does not match grid {spec.shape}")


def window(spec: GridSpec, box: BoundingBox) -> tuple:
    """Index slices (rows, cols) of the cells whose centres lie inside the closed box."""
    lats, lons = spec.lats(), spec.lons()
    rows = np.nonzero((lats >= box.sw[0] - EDGE_EPS) & (lats <= box.ne[0] + EDGE_EPS))[0]
    cols = np.nonzero((lons >= box.sw[1] - EDGE_EPS) & (lons <= box.ne[1] + EDGE_EPS))[0]
    if rows.size == 0 or cols.size == 0:
        raise EmptyIntersection(f"box {box} contains no cell centre of the grid")
    return slice(int(rows[0]), int(rows[-1]) + 1), slice(int(cols[0]), int(cols[-1]) + 1)


def subset_spec(spec: GridSpec, box: BoundingBox) -> GridSpec:
    rs, cs = window(spec, box)
    return GridSpec(lon0=spec.lon0 + cs.start * spec.dlon, lat0=spec.lat0 + rs.start * spec.dlat,
                    nx=cs.stop - cs.start, ny=rs.stop - rs.start, dlon=spec.dlon, dlat=spec.dlat)


def subset(field: GridField, spec: GridSpec, box: BoundingBox) -> tuple:
    """Cut ``field`` down to the cells inside ``box``; returns (field, spec of the cut)."""
    _check_shape(field, spec)
    rs, cs = window(spec, box)
    sub = GridField(field.parameter, field.time, field.values[rs, cs].copy())
    return sub, subset_spec(spec, box)


def wind_speed(u: GridField, v: GridField) -> GridField:
    """Horizontal wind speed from eastward (u) and northward (v) components."""
    mu, mv = _WIND.match(u.parameter), _WIND.match(v.parameter)
    if not mu or mu.group(1) != "u":
        raise ValueError(f"{u.parameter!r} is not an eastward wind component")
    if not mv or mv.group(1) != "v":
        raise ValueError(f"{v.parameter!r} is not a northward wind component")
    if mu.group(2) != mv.group(2):
        raise ValueError(f"height mismatch: {u.parameter} vs {v.parameter}")
    if u.time != v.time:
        raise ValueError(f"time mismatch: {u.time.isoformat()} vs {v.time.isoformat()}")
    if u.values.shape != v.values.shape:
        raise ValueError(f"shape mismatch: {u.values.shape} vs {v.values.shape}")
    return GridField(f"wind_speed_{mu.group(2)}", u.time, np.hypot(u.values, v.values))


def derive_wind_speeds(fields: Sequence[GridField]) -> list:
    """Wind speed for every (height, time) where both components are present."""
    comps: dict = {}
    for f in fields:
        m = _WIND.match(f.parameter)
        if m:
            comps[(m.group(2), f.time, m.group(1))] = f
    out = []
    for (height, time, kind), f in sorted(comps.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        if kind == "u" and (height, time, "v") in comps:
            out.append(wind_speed(f, comps[(height, time, "v")]))
    return out


@dataclass
class WeatherTable:
    columns: tuple
    rows: list  # (time, lat, lon, value-or-None per parameter)


def flatten_to_table(fields: Sequence[GridField], spec: GridSpec) -> WeatherTable:
    """One row per (time, cell): time ascending, then latitude descending, then longitude ascending."""
    by_key: dict = {}
    for f in fields:
        _check_shape(f, spec)
        key = (f.parameter, f.time)
        if key in by_key:
            raise ValueError(f"duplicate field {f.parameter} at {f.time.isoformat()}")
        by_key[key] = f
    params = sorted({p for p, _ in by_key})
    times = sorted({t for _, t in by_key})
    lats, lons = spec.lats(), spec.lons()
    rows = []
    for t in times:
        grids = [by_key.get((p, t)) for p in params]
        for j in range(spec.ny - 1, -1, -1):
            for i in range(spec.nx):
                cells = []
                for g in grids:
                    if g is None:
                        cells.append(None)
                    else:
                        x = g.values[j, i]
                        cells.append(None if np.isnan(x) else float(x))
                rows.append((t, float(lats[j]), float(lons[i]), *cells))
    return WeatherTable(("utc_timestamp", "lat", "lon", *params), rows)


def unflatten(table: WeatherTable, spec: GridSpec) -> list:
    """Regroup flattened rows into fields; a parameter with no value at a time yields no field."""
    params = table.columns[3:]
    lat_index = {float(v): j for j, v in enumerate(spec.lats())}
    lon_index = {float(v): i for i, v in enumerate(spec.lons())}
    grids: dict = {}
    seen = set()
    for row in table.rows:
        t, j, i = row[0], lat_index[row[1]], lon_index[row[2]]
        for p, x in zip(params, row[3:]):
            arr = grids.get((p, t))
            if arr is None:
                arr = grids[(p, t)] = np.full(spec.shape, np.nan)
            if x is not None:
                arr[j, i] = x
                seen.add((p, t))
    return [GridField(p, t, grids[(p, t)]) for p, t in sorted(seen, key=lambda k: (k[1], k[0]))]


def _parse_time(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        raise GridFormatError(f"time {text!r} lacks a UTC designator")
    return t.astimezone(timezone.utc)


def read_grid(source) -> tuple:
    """Parse a grid container from a path or raw bytes; returns (spec, fields)."""
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source).decode("utf-8")
    else:
        raw = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"line {exc.lineno}: {exc.msg}") from None
    if doc.get("format") != FORMAT:
        raise GridFormatError(f"expected format {FORMAT!r}")
    try:
        spec = GridSpec(**doc["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GridFormatError(f"bad grid header: {exc}") from None
    fields = []
    for k, item in enumerate(doc.get("fields", [])):
        try:
            arr = np.array([[np.nan if x is None else x for x in row] for row in item["values"]], dtype=float)
            f = GridField(item["parameter"], _parse_time(item["time"]), arr)
        except (KeyError, TypeError, ValueError) as exc:
            raise GridFormatError(f"field {k}: {exc}") from None
        if f.values.shape != spec.shape:
            raise GridFormatError(f"field {k} has shape {f.values.shape}, grid is {spec.shape}")
        fields.append(f)
    return spec, fields


def write_grid(path, spec: GridSpec, fields: Iterable[GridField]) -> None:
    doc = {
        "format": FORMAT,
        "grid": {"lon0": spec.lon0, "lat0": spec.lat0, "dlon": spec.dlon, "dlat": spec.dlat,
                 "nx": spec.nx, "ny": spec.ny},
        "fields": [{"parameter": f.parameter,
                    "time": f.time.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
                    "values": [[None if np.isnan(x) else float(x) for x in row] for row in f.values]}
                   for f in fields],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def parse_box(ne: Sequence[float], sw: Sequence[float]) -> BoundingBox:
    return BoundingBox(ne=(float(ne[0]), float(ne[1])), sw=(float(sw[0]), float(sw[1])))
