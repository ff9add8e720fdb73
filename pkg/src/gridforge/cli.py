"""Command line entry point: ``gridforge ingest|build|validate|diff``.

Exit codes: 0 success, 1 data or validation error, 2 configuration or
environment error.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import click
from filelock import FileLock, Timeout

from gridforge.cache import (CacheError, SourceUnavailable, content_hash, fetch, find_entry, latest_entry, read_snapshot,
                             snapshot_source)
from gridforge.config import ConfigError, PipelineConfig, load_config
from gridforge.datapackage import (DESCRIPTOR, PackageError, PackageMeta, VersionImmutabilityError, validate_package,
                                   version_stamp, write_package)
from gridforge.diff import diff_packages
from gridforge.pipelines import PipelineError, run

EXIT_OK, EXIT_DATA, EXIT_ENV = 0, 1, 2

log = logging.getLogger("gridforge")

_STANDARD = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    """One JSON object per log event; ``extra`` fields are included verbatim."""

    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        for k, v in vars(record).items():
            if k not in _STANDARD and not k.startswith("_"):
                out[k] = v
        out.setdefault("event", out["message"])
        return json.dumps(out, sort_keys=True, default=str)


def setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("gridforge")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


class Failure(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def _config(path) -> PipelineConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise Failure(str(exc), EXIT_ENV) from None


def _cache_dir(cache, cfg: PipelineConfig) -> Path:
    return Path(cache) if cache else cfg.base_dir / ".gridforge-cache"


def _created(cfg: PipelineConfig, retrieved: list) -> datetime:
    """Descriptor creation time, never the wall clock, so rebuilds stay byte-identical."""
    if cfg.created:
        t = datetime.fromisoformat(cfg.created.replace("Z", "+00:00"))
        if t.tzinfo is None:
            raise Failure("created needs a UTC designator", EXIT_ENV)
        return t.astimezone(timezone.utc)
    if os.environ.get("SOURCE_DATE_EPOCH"):
        return datetime.fromtimestamp(int(os.environ["SOURCE_DATE_EPOCH"]), timezone.utc)
    return datetime.fromisoformat(max(retrieved).replace("Z", "+00:00"))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log info-level events (JSON, on stderr).")
def main(verbose: bool) -> None:
    """Build validated, versioned data packages from raw power-system sources."""
    setup_logging(verbose)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--cache", envvar="GRIDFORGE_CACHE", type=click.Path(file_okay=False),
              help="Snapshot cache directory (default: .gridforge-cache next to the config).")
@click.option("--offline", is_flag=True, help="Never touch the network.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(1))
def ingest(config_path, cache, offline, jobs) -> None:
    """Snapshot every configured source into the cache."""
    cfg = _config(config_path)
    cache_dir = _cache_dir(cache, cfg)
    failed = []
    new = 0

    def get(desc):
        try:
            return fetch(desc, offline=offline), None
        except SourceUnavailable as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        fetched = list(pool.map(get, cfg.sources))
    for desc, (data, err) in zip(cfg.sources, fetched):
        if err is not None:
            failed.append(desc.id)
            log.error("source unavailable", extra={"event": "source unavailable", "source": desc.id,
                                                   "detail": str(err)})
            click.echo(f"{desc.id}\tunavailable\t{err}")
            continue
        known = find_entry(cache_dir, desc.id, content_hash(data)) is not None
        try:
            entry = snapshot_source(desc, data, cache_dir)
        except (CacheError, OSError) as exc:
            raise Failure(f"{desc.id}: {exc}", EXIT_ENV) from None
        new += not known
        click.echo(f"{desc.id}\t{'cached' if known else 'new'}\t{entry.content_hash}")
    click.echo(f"{len(cfg.sources) - len(failed)} sources cached, {new} new entries, {len(failed)} unavailable")
    if failed:
        raise Failure(f"unavailable sources: {', '.join(failed)}", EXIT_ENV)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--cache", envvar="GRIDFORGE_CACHE", type=click.Path(file_okay=False))
@click.option("--offline", is_flag=True, help="Accepted for symmetry; building only reads the cache.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(1))
def build(config_path, cache, offline, jobs) -> None:
    """Run the configured pipeline, validate the result and stamp its version."""
    cfg = _config(config_path)
    cache_dir = _cache_dir(cache, cfg)
    out = cfg.output_dir
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(out) + ".lock", timeout=0):
            ident = _build(cfg, cache_dir, jobs)
    except Timeout:
        raise Failure(f"{out} is locked by another gridforge process", EXIT_ENV) from None
    click.echo(f"built {ident} in {out}")


def _build(cfg: PipelineConfig, cache_dir: Path, jobs: int) -> str:
    entries = {}
    for desc in cfg.sources:
        entry = latest_entry(cache_dir, desc.id)
        if entry is None:
            raise Failure(f"stage ingest: source {desc.id} is not in the cache {cache_dir}; run ingest first",
                          EXIT_ENV)
        entries[desc.id] = entry

    def read(desc) -> bytes:
        return read_snapshot(entries[desc.id], cache_dir)

    try:
        result = run(cfg, read, jobs)
    except PipelineError as exc:
        raise Failure(f"stage {exc}", EXIT_DATA) from None
    except ConfigError as exc:
        raise Failure(f"stage options: {exc}", EXIT_ENV) from None
    except CacheError as exc:
        raise Failure(f"stage ingest: {exc}", EXIT_ENV) from None

    meta = PackageMeta(name=cfg.package_name, version=cfg.version,
                       created=_created(cfg, [e.retrieved_at for e in entries.values()]),
                       title=cfg.title, description=cfg.description,
                       sources=tuple((d.id, d.origin) for d in cfg.sources), contributors=cfg.contributors)
    out = cfg.output_dir
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        try:
            write_package(tmp, result.tables, meta)
        except PackageError as exc:
            raise Failure(f"stage write: {exc}", EXIT_DATA) from None
        for rel, text in sorted(result.reports.items()):
            target = tmp / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8", newline="\n")
        problems = validate_package(tmp)
        if problems:
            raise Failure("stage validate: " + "; ".join(str(p) for p in problems[:10]), EXIT_DATA)
        registry = cfg.registry or out.parent / "versions.json"
        try:
            stamp = version_stamp(tmp, cfg.version, registry)
        except VersionImmutabilityError as exc:
            raise Failure(f"stage stamp: {exc}", EXIT_DATA) from None
        except PackageError as exc:
            raise Failure(f"stage stamp: {exc}", EXIT_DATA) from None
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
        os.chmod(out, 0o755)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    log.info("package built", extra={"event": "package built", "package": stamp.identifier,
                                     "content_hash": stamp.content_hash})
    return stamp.identifier


@main.command()
@click.argument("package_dir", type=click.Path(file_okay=False))
def validate(package_dir) -> None:
    """Check a package directory; prints one line per problem."""
    pkg = Path(package_dir)
    if not (pkg / DESCRIPTOR).is_file():
        raise Failure(f"{pkg / DESCRIPTOR} not found", EXIT_ENV)
    problems = validate_package(pkg)
    for p in problems:
        click.echo(str(p))
    if problems:
        raise Failure(f"{len(problems)} problem{'s' if len(problems) != 1 else ''} found", EXIT_DATA)
    click.echo("package is valid")


@main.command()
@click.argument("dir_a", type=click.Path(file_okay=False))
@click.argument("dir_b", type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def diff(dir_a, dir_b, as_json) -> None:
    """Report schema and cell differences between two packages."""
    for d in (dir_a, dir_b):
        if not (Path(d) / DESCRIPTOR).is_file():
            raise Failure(f"{Path(d) / DESCRIPTOR} not found", EXIT_ENV)
        problems = validate_package(d)
        if problems:
            raise Failure(f"{d} does not validate: {problems[0]}", EXIT_DATA)
    result = diff_packages(dir_a, dir_b)
    if as_json:
        click.echo(json.dumps(result.to_json(), indent=2, sort_keys=True))
    else:
        click.echo(result.render(), nl=False)


if __name__ == "__main__":
    main()
