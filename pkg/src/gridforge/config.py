"""Pipeline configuration files.

A config is a JSON object::

    {"package_name": "time_series", "version": "2018-03-13", "pipeline": "timeseries",
     "sources": ["sources/de.json", "sources/gb.json"], "output_dir": "out/time_series",
     "options": {...}}

Relative paths are resolved against the config file's directory. Optional
keys: ``title``, ``description``, ``contributors``, ``created`` (UTC instant
recorded in the descriptor) and ``registry`` (version registry file).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from gridforge.sources import DescriptorError, SourceDescriptor, load_descriptor

PIPELINES = ("timeseries", "plants", "capacity", "weather")

_KEYS = {"package_name", "version", "pipeline", "sources", "output_dir", "options",
         "title", "description", "contributors", "created", "registry"}
_REQUIRED = ("package_name", "version", "pipeline", "sources", "output_dir")

_OPTIONS = {
    "timeseries": {"max_gap_minutes", "sources", "units", "constraints", "start", "end"},
    "plants": {"conventional", "renewable", "contexts", "tau", "match_keys", "unmapped_node", "rules",
               "daily_capacity"},
    "capacity": {"units", "range_reports", "unmapped_node"},
    "weather": {"bbox", "parameters"},
}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    package_name: str
    version: str
    pipeline: str
    sources: list            # SourceDescriptor, in config order
    output_dir: Path
    options: dict = field(default_factory=dict)
    title: str = ""
    description: str = ""
    contributors: tuple = ()
    created: Optional[str] = None
    registry: Optional[Path] = None
    base_dir: Path = Path(".")

    def option(self, name: str, default=None):
        return self.options.get(name, default)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - _KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"{path}: missing keys {missing}")
    if doc["pipeline"] not in PIPELINES:
        raise ConfigError(f"{path}: pipeline must be one of {PIPELINES}")
    options = doc.get("options", {})
    bad = sorted(set(options) - _OPTIONS[doc["pipeline"]])
    if bad:
        raise ConfigError(f"{path}: options {bad} are not valid for the {doc['pipeline']} pipeline")
    base = path.parent.resolve()
    descs = []
    for ref in doc["sources"]:
        p = base / ref
        if not p.is_file():
            raise ConfigError(f"{path}: source descriptor {ref} not found")
        try:
            descs.append(load_descriptor(p))
        except DescriptorError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    ids = [d.id for d in descs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"{path}: duplicate source ids {dupes}")
    if not descs:
        raise ConfigError(f"{path}: no sources configured")
    return PipelineConfig(
        package_name=doc["package_name"], version=str(doc["version"]), pipeline=doc["pipeline"],
        sources=descs, output_dir=(base / doc["output_dir"]).resolve(), options=options,
        title=doc.get("title", ""), description=doc.get("description", ""),
        contributors=tuple(doc.get("contributors", ())), created=doc.get("created"),
        registry=(base / doc["registry"]) if doc.get("registry") else None, base_dir=base)


def source(cfg: PipelineConfig, source_id: str) -> SourceDescriptor:
    for d in cfg.sources:
        if d.id == source_id:
            return d
    raise ConfigError(f"option refers to unknown source {source_id!r}")
