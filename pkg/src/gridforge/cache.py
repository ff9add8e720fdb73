"""Content-addressed snapshots of original source files.

Layout::

    cache_dir/index.json                  manifest of all entries
    cache_dir/<source_id>/<sha256>.raw    original bytes, written once

Pipelines read inputs only from here, so a build can be repeated offline
from exactly the bytes that were retrieved.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import urllib.request
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from filelock import FileLock

from gridforge.sources import SourceDescriptor

log = logging.getLogger(__name__)

INDEX = "index.json"


class CacheError(RuntimeError):
    pass


class SourceUnavailable(CacheError):
    pass


@dataclass(frozen=True)
class CacheEntry:
    source_id: str
    retrieved_at: str  # ISO 8601 UTC, "YYYY-MM-DDTHH:MM:SSZ"
    content_hash: str
    stored_path: str  # relative to the cache dir

    def path(self, cache_dir) -> Path:
        return Path(cache_dir) / self.stored_path


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def read_index(cache_dir) -> list:
    path = Path(cache_dir) / INDEX
    if not path.exists():
        return []
    return [CacheEntry(**e) for e in json.loads(path.read_text(encoding="utf-8"))]


def _write_index(cache_dir: Path, entries: list) -> None:
    entries = sorted(entries, key=lambda e: (e.source_id, e.retrieved_at, e.content_hash))
    text = json.dumps([asdict(e) for e in entries], indent=2, sort_keys=True) + "\n"
    _atomic_write(cache_dir / INDEX, text.encode("utf-8"))


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def find_entry(cache_dir, source_id: str, digest: str) -> Optional[CacheEntry]:
    for entry in read_index(cache_dir):
        if entry.source_id == source_id and entry.content_hash == digest:
            return entry
    return None


def latest_entry(cache_dir, source_id: str) -> Optional[CacheEntry]:
    entries = [e for e in read_index(cache_dir) if e.source_id == source_id]
    if not entries:
        return None
    return max(entries, key=lambda e: (e.retrieved_at, e.content_hash))


def snapshot_source(desc: SourceDescriptor, data: bytes, cache_dir, retrieved_at: Optional[str] = None) -> CacheEntry:
    """Store ``data`` for ``desc`` under its content hash.

    Snapshotting identical bytes again returns the existing entry and leaves
    the stored file untouched.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    digest = content_hash(data)
    rel = f"{desc.id}/{digest}.raw"
    target = cache_dir / rel
    with FileLock(str(cache_dir / ".lock")):
        entries = read_index(cache_dir)
        for entry in entries:
            if entry.source_id == desc.id and entry.content_hash == digest:
                if not target.exists():
                    raise CacheError(f"cache entry {rel} listed in index but missing on disk")
                if target.read_bytes() != data:
                    raise CacheError(f"hash collision on {rel}: stored bytes differ")
                return entry
        target.parent.mkdir(parents=True, exist_ok=True)
        if target.exists():
            if target.read_bytes() != data:
                raise CacheError(f"hash collision on {rel}: stored bytes differ")
        else:
            _atomic_write(target, data)
            os.chmod(target, 0o444)
        entry = CacheEntry(desc.id, retrieved_at or _now(), digest, rel)
        entries.append(entry)
        _write_index(cache_dir, entries)
    log.info("snapshot stored", extra={"event": "snapshot", "source": desc.id, "hash": digest})
    return entry


def read_snapshot(entry: CacheEntry, cache_dir) -> bytes:
    data = entry.path(cache_dir).read_bytes()
    if content_hash(data) != entry.content_hash:
        raise CacheError(f"stored file {entry.stored_path} does not match its content hash")
    return data


def fetch(desc: SourceDescriptor, offline: bool = False, timeout: float = 60.0) -> bytes:
    """Retrieve the original bytes of a source from a local path or URL."""
    origin = desc.resolve_origin()
    if origin.startswith(("http://", "https://")):
        if offline:
            raise SourceUnavailable(f"{desc.id}: {origin} needs network access (offline mode)")
        try:
            with urllib.request.urlopen(origin, timeout=timeout) as resp:
                return resp.read()
        except OSError as exc:
            raise SourceUnavailable(f"{desc.id}: {exc}") from None
    if origin.startswith("file://"):
        origin = origin[len("file://"):]
    try:
        return Path(origin).read_bytes()
    except OSError as exc:
        raise SourceUnavailable(f"{desc.id}: {exc.strerror}: {origin}") from None
