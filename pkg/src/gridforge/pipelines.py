"""The four package pipelines: time series, power plants, national capacity, weather.

Each pipeline reads original source bytes (through ``read``, normally the
snapshot cache), and returns the resources to write plus any JSON reports.
Every ordering is explicit so identical inputs give identical packages.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Callable, Optional

from gridforge.capacity import (CapacityObservation, NoSuchCountryYear, build_matrix, range_report,
                                with_rollups)
from gridforge.config import ConfigError, PipelineConfig, source
from gridforge.datapackage import FieldSchema, Resource, with_markers
from gridforge.markers import INCOMPLETE_SUM, UNMAPPED_TERM, MarkerFlag
from gridforge.plants import (MatchPolicy, PlantRecord, dedupe_cross_domain, flag_implausible, load_rules,
                              merge_lists, records_from_table)
from gridforge.sources import SourceDescriptor, parse_number, parse_numbers, parse_table
from gridforge.taxonomy import Taxonomy, UnmappedTerm, classify, load_mapping, load_taxonomy
from gridforge.timeseries import (DEFAULT_MAX_GAP, EPOCH, aggregate_to_hourly, build_daily_capacity, fill_gaps,
                                  series_from_points)
from gridforge.utc import LocalStampColumn, parse_stamps, to_utc
from gridforge.weather import (derive_wind_speeds, flatten_to_table, parse_box, read_grid, subset,
                               subset_spec)

log = logging.getLogger(__name__)
UTC = timezone.utc
HOUR = timedelta(hours=1)

Reader = Callable[[SourceDescriptor], bytes]


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


@dataclass
class BuildOutput:
    tables: list                                 # (Resource, rows)
    reports: dict = field(default_factory=dict)  # relative path -> text


def _map(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except (ValueError, LookupError, OSError) as exc:
        raise PipelineError(stage, str(exc)) from exc


def run(cfg: PipelineConfig, read: Reader, jobs: int = 1) -> BuildOutput:
    runner = {"timeseries": timeseries_pipeline, "plants": plants_pipeline,
              "capacity": capacity_pipeline, "weather": weather_pipeline}[cfg.pipeline]
    return runner(cfg, read, jobs)


# -- time series ---------------------------------------------------------------

@dataclass
class _Columns:
    source_id: str
    resolution: int
    instants: list
    series: dict  # series id -> values


def _read_series(desc: SourceDescriptor, data: bytes, opts: dict) -> _Columns:
    resolution = opts.get("resolution_minutes", 60)
    table = _stage(f"parse {desc.id}", parse_table, data, desc.dialect, desc.column_map, desc.id)
    cols = list(table.columns)
    if "timestamp" in cols:
        cells = table.column("timestamp")
        cols.remove("timestamp")
    elif "date" in cols and "time" in cols:
        cells = [None if d is None or t is None else f"{d} {t}"
                 for d, t in zip(table.column("date"), table.column("time"))]
        cols.remove("date")
        cols.remove("time")
    else:
        raise PipelineError(f"parse {desc.id}", "needs a timestamp column or date and time columns")
    missing = [i for i, c in enumerate(cells) if c is None]
    if missing:
        raise PipelineError(f"parse {desc.id}", f"missing timestamp at row {missing[0] + 1}")
    stamps = _stage(f"parse {desc.id}", parse_stamps, cells, opts.get("timestamp_format", "iso"))
    if stamps and all(s.tzinfo is not None for s in stamps):
        instants = [s.astimezone(UTC) for s in stamps]
    else:
        column = LocalStampColumn(desc.timezone, stamps, opts.get("disambiguation", "order"))
        instants = _stage(f"utc {desc.id}", to_utc, column)
    series = {c: _stage(f"parse {desc.id}", parse_numbers, table.column(c), desc.dialect) for c in cols}
    return _Columns(desc.id, resolution, instants, series)


def _floor_hour(t: datetime) -> datetime:
    return t - (t - EPOCH) % HOUR


def _ceil_hour(t: datetime) -> datetime:
    rem = (t - EPOCH) % HOUR
    return t + (HOUR - rem) if rem else t


def _instant(text: str) -> datetime:
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if t.tzinfo is None:
        raise ConfigError(f"{text!r} needs a UTC designator")
    return t.astimezone(UTC)


def timeseries_pipeline(cfg: PipelineConfig, read: Reader, jobs: int = 1) -> BuildOutput:
    per_source = cfg.option("sources", {})
    for sid in per_source:
        source(cfg, sid)
    max_gap = timedelta(minutes=cfg.option("max_gap_minutes", DEFAULT_MAX_GAP // timedelta(minutes=1)))
    parsed = _map(lambda d: _read_series(d, read(d), per_source.get(d.id, {})), cfg.sources, jobs)

    owner: dict = {}
    for p in parsed:
        for sid in p.series:
            if sid in owner:
                raise PipelineError("combine", f"series {sid!r} comes from both {owner[sid]} and {p.source_id}")
            owner[sid] = p.source_id
    spans = [(p.instants[0], p.instants[-1] + timedelta(minutes=p.resolution)) for p in parsed if p.instants]
    if not spans:
        raise PipelineError("combine", "no timestamps in any source")
    start = _instant(cfg.option("start")) if cfg.option("start") else _floor_hour(min(s for s, _ in spans))
    end = _instant(cfg.option("end")) if cfg.option("end") else _ceil_hour(max(e for _, e in spans))
    if (start - EPOCH) % HOUR or (end - EPOCH) % HOUR or end <= start:
        raise ConfigError("start and end must be full UTC hours with start before end")

    hourly = {}
    for p in parsed:
        for sid, values in p.series.items():
            ts = _stage(f"grid {sid}", series_from_points, sid, p.instants, values, p.resolution, start, end)
            filled = _stage(f"interpolate {sid}", fill_gaps, ts, max_gap)
            n_filled = sum(1 for a, b in zip(ts.values, filled.values) if a is None and b is not None)
            if n_filled:
                log.info("marker added", extra={"event": "marker added", "series": sid,
                                                "flag": MarkerFlag.INTERPOLATED.value, "count": n_filled})
            hourly[sid] = filled if p.resolution == 60 else _stage(f"aggregate {sid}", aggregate_to_hourly, filled)

    units = cfg.option("units", {})
    constraints = cfg.option("constraints", {})
    names = sorted(hourly)
    base = [FieldSchema("utc_timestamp", "datetime", "start of the hour in UTC")]
    base += [FieldSchema(sid, "number", f"{sid} from {owner[sid]}", units.get(sid, "MW"), constraints.get(sid))
             for sid in names]
    schema, companions = with_markers(base, names)
    n = (end - start) // HOUR
    rows = []
    for i in range(n):
        row = [start + i * HOUR]
        for sid in names:
            row += [hourly[sid].values[i], hourly[sid].markers[i]]
        rows.append(row)
    res = Resource("time_series_60min", "time_series_60min.csv", schema, companions,
                   "hourly series, one column per series id")
    return BuildOutput([(res, rows)])


# -- power plants --------------------------------------------------------------

def _mapping(desc: SourceDescriptor, t: Taxonomy):
    if not desc.vocab_map_id:
        raise ConfigError(f"source {desc.id} needs a vocab_map_id")
    try:
        return load_mapping(desc.vocab_map_id, t, [desc.base_dir] if desc.base_dir else [])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def _plant_records(desc: SourceDescriptor, data: bytes, t: Taxonomy, context: Optional[str],
                   unmapped_node: Optional[str]) -> list:
    table = _stage(f"parse {desc.id}", parse_table, data, desc.dialect, desc.column_map, desc.id)
    mapping = _mapping(desc, t)
    try:
        return records_from_table(table, desc.dialect, mapping, t, context=context, unmapped_node=unmapped_node)
    except UnmappedTerm as exc:
        raise PipelineError(f"classify {desc.id}", f"term {exc.term!r} is not in mapping {exc.mapping_id!r}") from None
    except ValueError as exc:
        raise PipelineError(f"records {desc.id}", str(exc)) from None


PLANT_FIELDS = (
    FieldSchema("record_id", "string", "identifier in the source list"),
    FieldSchema("name", "string"),
    FieldSchema("country", "string", "ISO 3166-1 alpha-2"),
    FieldSchema("energy_source", "string", "taxonomy node"),
    FieldSchema("technology", "string"),
    FieldSchema("capacity_net_mw", "number", "net electrical capacity", "MW"),
    FieldSchema("capacity_gross_mw", "number", "gross electrical capacity", "MW"),
    FieldSchema("chp", "boolean", "combined heat and power"),
    FieldSchema("commissioned", "date"),
    FieldSchema("decommissioned", "date"),
    FieldSchema("lat", "number", "latitude", "degrees"),
    FieldSchema("lon", "number", "longitude", "degrees"),
    FieldSchema("coord_precision", "string", "how the coordinates were obtained",
                constraints={"enum": ["exact", "zip_centroid", "district_centroid"]}),
    FieldSchema("eic", "string", "energy identification code"),
    FieldSchema("efficiency", "number", "electrical efficiency", "fraction"),
    FieldSchema("sources", "string", "contributing source lists, semicolon-separated"),
    FieldSchema("implausible_rules", "string", "ids of failed plausibility rules, semicolon-separated"),
    FieldSchema("record_marker", "string", "modification flags for the whole record"),
)


def _plant_resource(name: str) -> Resource:
    # record-level markers: the companion is attached to the identifier column
    return Resource(name, f"{name}.csv", PLANT_FIELDS, {"record_id": "record_marker"})


def _plant_row(r: PlantRecord) -> list:
    return [r.record_id, r.name, r.country, r.source_node, r.technology, r.capacity_net_mw, r.capacity_gross_mw,
            r.chp, r.commissioned, r.decommissioned, r.lat, r.lon, r.coord_precision, r.eic, r.efficiency,
            ";".join(r.provenance), ";".join(sorted(r.rule_ids)), r.markers]


def plants_pipeline(cfg: PipelineConfig, read: Reader, jobs: int = 1) -> BuildOutput:
    t = load_taxonomy()
    conv_opt = cfg.option("conventional", {})
    ren_ids = list(cfg.option("renewable", []))
    contexts = cfg.option("contexts", {})
    unmapped = cfg.option("unmapped_node")
    roles = {}
    for sid in [conv_opt.get("primary"), conv_opt.get("secondary")]:
        if sid:
            roles[sid] = "conventional"
    for sid in ren_ids:
        roles[sid] = "renewable"
    for sid in roles:
        source(cfg, sid)
    unused = sorted(d.id for d in cfg.sources if d.id not in roles)
    if unused:
        raise ConfigError(f"sources {unused} have no role in the plants options")
    if unmapped is not None and unmapped not in t:
        raise ConfigError(f"unmapped_node {unmapped!r} is not a taxonomy node")

    descs = [source(cfg, sid) for sid in sorted(roles)]
    loaded = _map(lambda d: _plant_records(d, read(d), t, contexts.get(d.id, roles[d.id]), unmapped), descs, jobs)
    by_id = dict(zip(sorted(roles), loaded))

    policy = _stage("options", MatchPolicy, tuple(cfg.option("match_keys", ("eic", "name"))),
                    cfg.option("tau", 0.05))
    reports = {}
    conventional: list = []
    if conv_opt.get("primary"):
        if conv_opt.get("secondary"):
            merged = merge_lists(by_id[conv_opt["primary"]], by_id[conv_opt["secondary"]], policy)
            conventional = merged.records
            reports["reports/conventional_match.json"] = merged.report.to_json()
        else:
            conventional = by_id[conv_opt["primary"]]
    renewable = [r for sid in sorted(ren_ids) for r in by_id[sid]]
    deduped = dedupe_cross_domain(conventional, renewable, t, policy.tau)
    reports["reports/cross_domain_overlap.json"] = deduped.report.to_json()

    rules = _stage("rules", load_rules, (cfg.base_dir / cfg.option("rules")) if cfg.option("rules") else None)
    conventional = sorted(flag_implausible(deduped.conventional, rules, t), key=lambda r: r.record_id)
    renewable = sorted(flag_implausible(deduped.renewable, rules, t), key=lambda r: r.record_id)
    tables = [(_plant_resource("conventional_power_plants"), [_plant_row(r) for r in conventional]),
              (_plant_resource("renewable_power_plants"), [_plant_row(r) for r in renewable])]

    daily = cfg.option("daily_capacity")
    if daily:
        tables.append(_daily_capacity(daily, renewable, t, reports))
    return BuildOutput(tables, reports)


def _daily_capacity(opts: dict, records: list, t: Taxonomy, reports: dict) -> tuple:
    try:
        first, last = date.fromisoformat(opts["start"]), date.fromisoformat(opts["end"])
        groupings = list(opts["groupings"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"daily_capacity needs start, end and groupings: {exc}") from None
    for g in groupings:
        if g not in t:
            raise ConfigError(f"daily_capacity grouping {g!r} is not a taxonomy node")
    results = {g: build_daily_capacity(records, g, first, last, t) for g in groupings}
    reports["reports/daily_capacity_excluded.json"] = json.dumps(
        {g: results[g].excluded for g in groupings}, indent=2, sort_keys=True) + "\n"
    names = [f"{g}_mw" for g in groupings]
    base = [FieldSchema("date", "date")] + [
        FieldSchema(n, "number", f"installed capacity within {g}", "MW", {"minimum": 0})
        for n, g in zip(names, groupings)]
    schema, companions = with_markers(base, names)
    own = frozenset({MarkerFlag.OWN_CALCULATION})
    rows = []
    for i, day in enumerate(results[groupings[0]].series.dates):
        row = [day]
        for g in groupings:
            row += [results[g].series.capacity[i], own]
        rows.append(row)
    return Resource("renewable_capacity_daily", "renewable_capacity_daily.csv", schema, companions), rows


# -- national capacity ---------------------------------------------------------

_UNITS = {"GW": 1, "MW": 1000}  # divisor to GW


def _observations(desc: SourceDescriptor, data: bytes, t: Taxonomy, unit: str,
                  unmapped: Optional[str]) -> tuple:
    table = _stage(f"parse {desc.id}", parse_table, data, desc.dialect, desc.column_map, desc.id)
    need = {"country", "year", "technology", "capacity"}
    if not need <= set(table.columns):
        raise PipelineError(f"parse {desc.id}", f"needs columns {sorted(need)}")
    mapping = _mapping(desc, t)
    obs, flags = [], {}
    for n, row in enumerate(table.rows, start=1):
        cell = dict(zip(table.columns, row))
        term = cell["technology"] or ""
        marks = set()
        try:
            node = classify(term, mapping, t)
        except UnmappedTerm as exc:
            if unmapped is None:
                raise PipelineError(f"classify {desc.id}", f"row {n}: term {exc.term!r} is not in mapping "
                                                           f"{exc.mapping_id!r}") from None
            node = unmapped
            marks.add(UNMAPPED_TERM)
        value = _stage(f"parse {desc.id}", parse_number, cell["capacity"], desc.dialect)
        try:
            year = int(cell["year"])
        except (TypeError, ValueError):
            raise PipelineError(f"parse {desc.id}", f"row {n}: bad year {cell['year']!r}") from None
        o = _stage(f"parse {desc.id}", CapacityObservation, cell["country"] or "", year, node, desc.id,
                   None if value is None else value / _UNITS[unit])
        obs.append(o)
        if marks:
            flags[o.key] = frozenset(marks)
    return obs, flags


def capacity_pipeline(cfg: PipelineConfig, read: Reader, jobs: int = 1) -> BuildOutput:
    t = load_taxonomy()
    units = cfg.option("units", {})
    for sid, unit in units.items():
        source(cfg, sid)
        if unit not in _UNITS:
            raise ConfigError(f"unit for {sid} must be one of {sorted(_UNITS)}")
    unmapped = cfg.option("unmapped_node")
    loaded = _map(lambda d: _observations(d, read(d), t, units.get(d.id, "GW"), unmapped), cfg.sources, jobs)
    obs = [o for part, _ in loaded for o in part]
    flags = {k: v for _, f in loaded for k, v in f.items()}
    direct = {o.key for o in obs}
    full = _stage("roll-up", with_rollups, obs, t)
    matrix = _stage("pivot", build_matrix, full)

    sources = list(matrix.columns)
    base = [FieldSchema("country", "string"), FieldSchema("year", "integer"),
            FieldSchema("technology", "string", "taxonomy node"), FieldSchema("level", "integer", "taxonomy level")]
    base += [FieldSchema(s, "number", f"installed capacity reported by {s}", "GW", {"minimum": 0}) for s in sources]
    schema, companions = with_markers(base, sources)
    rows = []
    for row_key in matrix.rows:
        country, year, node = row_key
        row = [country, year, node, t.node(node).level]
        for s in sources:
            o = matrix.cells.get((row_key, s))
            marks = set(flags.get((country, year, node, s), ()))
            if o is not None and o.key not in direct:
                marks.add(MarkerFlag.SUMMED_FROM_COMPONENTS)
                if o.incomplete:
                    marks.add(INCOMPLETE_SUM)
            row += [None if o is None else o.value, frozenset(marks)]
        rows.append(row)
    res = Resource("national_generation_capacity", "national_generation_capacity.csv", schema, companions,
                   "installed capacity per country, year and technology, one column per source")

    wanted = cfg.option("range_reports") or sorted({(c, y) for c, y, _ in matrix.rows})
    ranges = []
    for country, year in wanted:
        try:
            rep = range_report(matrix, country, int(year), t)
        except NoSuchCountryYear:
            raise PipelineError("range report", f"no observations for {country} {year}") from None
        ranges.append({"country": rep.country, "year": rep.year, "totals": rep.totals,
                       "incomplete": rep.incomplete, "min_total_gw": rep.min_total, "max_total_gw": rep.max_total,
                       "note": rep.note})
    reports = {"reports/capacity_ranges.json": json.dumps(ranges, indent=2, sort_keys=True) + "\n"}
    return BuildOutput([(res, rows)], reports)


# -- weather -------------------------------------------------------------------

def weather_pipeline(cfg: PipelineConfig, read: Reader, jobs: int = 1) -> BuildOutput:
    grids = _map(lambda d: _stage(f"parse {d.id}", read_grid, read(d)), cfg.sources, jobs)
    spec = grids[0][0]
    for (other, _), d in zip(grids[1:], cfg.sources[1:]):
        if other != spec:
            raise PipelineError(f"parse {d.id}", "grid differs from the first source's grid")
    fields = [f for _, fs in grids for f in fs]
    box_opt = cfg.option("bbox")
    if box_opt:
        box = _stage("options", parse_box, box_opt["ne"], box_opt["sw"])
        fields = [_stage("subset", subset, f, spec, box)[0] for f in fields]
        spec = _stage("subset", subset_spec, spec, box)
    derived = _stage("wind speed", derive_wind_speeds, fields)
    wanted = cfg.option("parameters")
    fields = fields + derived
    if wanted:
        fields = [f for f in fields if f.parameter in set(wanted)]
    table = _stage("flatten", flatten_to_table, fields, spec)
    params = list(table.columns[3:])
    units = {f.parameter: f.unit for f in fields}
    speed = [p for p in params if p.startswith("wind_speed_") and any(d.parameter == p for d in derived)]
    base = [FieldSchema("utc_timestamp", "datetime"), FieldSchema("lat", "number", "cell centre latitude", "degrees"),
            FieldSchema("lon", "number", "cell centre longitude", "degrees")]
    base += [FieldSchema(p, "number", unit=units[p]) for p in params]
    schema, companions = with_markers(base, speed)
    own = frozenset({MarkerFlag.OWN_CALCULATION})
    rows = []
    for row in table.rows:
        out = list(row[:3])
        for p, v in zip(params, row[3:]):
            out.append(v)
            if p in speed:
                out.append(own if v is not None else frozenset())
        rows.append(out)
    res = Resource("weather_data", "weather_data.csv", schema, companions,
                   "one row per time and grid cell, north to south, west to east")
    return BuildOutput([(res, rows)])
