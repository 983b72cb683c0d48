"""Data management: lazy byte materialization behind a session filesystem.

Registered data stays remote until a tale actually opens a file; the first
open blocks while the bytes are transferred into a local cache, and every
later open is served locally. The cache is bounded: when space runs out,
unlocked entries are evicted in ascending order of an objective score

    score = w_count * log(1 + usage_count)
          + w_freq  * usage_frequency
          + w_recency * 1 / (1 + age_seconds)

so the least useful entries go first. Entries locked by open handles are
never evicted. With weights (0, 0, 1) the policy degenerates to plain LRU.

Cache layout on disk (stable, documented for operators):
    <cache_root>/<sha256(key)>/data
    <cache_root>/<sha256(key)>/meta.json   {key, size, usage_count, last_access}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from .catalog import ITEM, Catalog, ProvenanceRecord
from .errors import (
    ConfigInvalid,
    EvictionImpossible,
    IoError,
    NoSuchPath,
    StaleHandle,
    UnknownNode,
)
from .providers import FileEntry, ProviderRegistry
from .storage import JournalStore, Table, canonical_json

log = logging.getLogger(__name__)

ABSENT = "Absent"
TRANSFERRING = "Transferring"
PRESENT = "Present"

FREQ_HALF_LIFE = 3600.0  # seconds

CacheKey = Tuple[str, str, str]  # (provider, identifier, source_url)


@dataclass
class StorageConfig:
    capacity: int
    eviction_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    gc_period: float = 60.0

    def validate(self) -> "StorageConfig":
        if self.capacity <= 0:
            raise ConfigInvalid("cache capacity must be > 0")
        if any(w < 0 for w in self.eviction_weights):
            raise ConfigInvalid("eviction weights must be >= 0")
        return self


@dataclass
class CacheEntry:
    key: CacheKey
    local_path: str
    size: int
    state: str = ABSENT
    usage_count: int = 0
    usage_frequency: float = 0.0  # exponentially decayed access count
    last_access: float = 0.0
    lock_count: int = 0


@dataclass
class MountRecord:
    """One file visible in a session: size plus frozen provenance."""

    size: int
    provenance: ProvenanceRecord

    @property
    def key(self) -> CacheKey:
        p = self.provenance
        return (p.provider, p.identifier, p.source_url)

    def as_entry(self, path: str) -> FileEntry:
        p = self.provenance
        return FileEntry(
            original_name=p.original_name,
            relative_path=path.lstrip("/"),
            size=self.size,
            source_url=p.source_url,
            protocol=p.protocol,
            checksum=p.checksum,
        )


@dataclass
class Session:
    id: str
    roots: List[str]
    files: Dict[str, MountRecord]
    dirs: Set[str]
    created: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "roots": list(self.roots),
            "created": self.created,
            "dirs": sorted(self.dirs),
            "files": {
                path: {"size": rec.size, "provenance": rec.provenance.to_dict()}
                for path, rec in self.files.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        return cls(
            id=d["id"],
            roots=list(d["roots"]),
            created=d["created"],
            dirs=set(d["dirs"]),
            files={
                path: MountRecord(
                    size=rec["size"],
                    provenance=ProvenanceRecord.from_dict(rec["provenance"]),
                )
                for path, rec in d["files"].items()
            },
        )


@dataclass
class FileHandle:
    id: str
    session_id: str
    path: str
    key: CacheKey
    size: int
    closed: bool = False


@dataclass
class FileStat:
    path: str
    is_dir: bool
    size: int


@dataclass
class GcReport:
    evicted: List[CacheKey] = field(default_factory=list)
    bytes_freed: int = 0
    warning: Optional[str] = None


class DataManager:
    """Cache, eviction, and POSIX-like access for session data.

    All operations may be called concurrently. Entry state transitions
    happen under one condition variable; at most one transfer per entry
    is in flight (later openers wait for the first). Byte transfers run
    outside the lock.
    """

    def __init__(
        self,
        catalog: Catalog,
        registry: ProviderRegistry,
        cache_root: str,
        config: StorageConfig,
        store: Optional[JournalStore] = None,
        clock: Callable[[], float] = time.time,
        scorer: Optional[Callable[[CacheEntry, float], float]] = None,
    ):
        self.catalog = catalog
        self.registry = registry
        self.cache_root = cache_root
        self.config = config.validate()
        self.clock = clock
        self._scorer = scorer
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._entries: Dict[CacheKey, CacheEntry] = {}
        self._sessions_tbl = Table(store, "dms.sessions")
        self._sessions: Dict[str, Session] = {
            k: Session.from_dict(v) for k, v in self._sessions_tbl.items()
        }
        self.warnings: List[str] = []
        self._gc_thread: Optional[threading.Thread] = None
        self._gc_stop = threading.Event()
        os.makedirs(cache_root, exist_ok=True)
        self._rebuild_cache_index()

    # -- cache directory ---------------------------------------------------

    @staticmethod
    def _key_hash(key: CacheKey) -> str:
        return hashlib.sha256(canonical_json(list(key)).encode("utf-8")).hexdigest()

    def _entry_dir(self, key: CacheKey) -> str:
        return os.path.join(self.cache_root, self._key_hash(key))

    def _write_sidecar(self, entry: CacheEntry) -> None:
        meta = {
            "key": list(entry.key),
            "size": entry.size,
            "usage_count": entry.usage_count,
            "last_access": entry.last_access,
        }
        with open(os.path.join(os.path.dirname(entry.local_path), "meta.json"), "w") as fh:
            json.dump(meta, fh)

    def _rebuild_cache_index(self) -> None:
        """Re-adopt cached files that survived a restart."""
        for name in os.listdir(self.cache_root):
            entry_dir = os.path.join(self.cache_root, name)
            data = os.path.join(entry_dir, "data")
            meta_path = os.path.join(entry_dir, "meta.json")
            if not (os.path.isfile(data) and os.path.isfile(meta_path)):
                continue
            try:
                with open(meta_path) as fh:
                    meta = json.load(fh)
                key = tuple(meta["key"])
            except (json.JSONDecodeError, KeyError, TypeError):
                continue
            self._entries[key] = CacheEntry(
                key=key,
                local_path=data,
                size=os.path.getsize(data),
                state=PRESENT,
                usage_count=int(meta.get("usage_count", 0)),
                last_access=float(meta.get("last_access", 0.0)),
            )

    # -- sessions ------------------------------------------------------------

    def create_session(self, roots: List[str]) -> Session:
        """Snapshot the catalog shape under ``roots``; transfers nothing."""
        files: Dict[str, MountRecord] = {}
        dirs: Set[str] = {"/"}
        taken_roots: Set[str] = set()
        for root_id in roots:
            node = self.catalog.get_node(root_id)  # raises UnknownNode
            name = node.name
            if name in taken_roots:
                n = 1
                while f"{name} ({n})" in taken_roots:
                    n += 1
                name = f"{name} ({n})"
            taken_roots.add(name)
            self._mount_subtree(node, "/" + name, files, dirs)
        session = Session(
            id=uuid.uuid4().hex,
            roots=list(roots),
            files=files,
            dirs=dirs,
            created=self.clock(),
        )
        with self._lock:
            self._sessions[session.id] = session
            self._sessions_tbl.put(session.id, session.to_dict())
        return session

    def _mount_subtree(self, node, prefix: str, files, dirs) -> None:
        if node.kind == ITEM:
            refs = self.catalog.file_refs(node.id)
            if len(refs) == 1:
                files[prefix] = MountRecord(size=refs[0].size, provenance=refs[0].provenance)
            elif len(refs) > 1:
                # multi-file item: presented as a directory of its files
                dirs.add(prefix)
                taken: Set[str] = set()
                for ref in refs:
                    name = ref.provenance.original_name
                    if name in taken:
                        n = 1
                        while f"{name} ({n})" in taken:
                            n += 1
                        name = f"{name} ({n})"
                    taken.add(name)
                    files[f"{prefix}/{name}"] = MountRecord(
                        size=ref.size, provenance=ref.provenance
                    )
            return
        dirs.add(prefix)
        for child in self.catalog.list_children(node.id):
            self._mount_subtree(child, f"{prefix}/{child.name}", files, dirs)

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownNode(f"no such session: {session_id}")
        return session

    def drop_session(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)
            self._sessions_tbl.delete(session_id)

    # -- access ----------------------------------------------------------

    def open_file(self, session: Session, path: str) -> FileHandle:
        """Open for reading; blocks until the content is locally present."""
        rec = session.files.get(path)
        if rec is None:
            raise NoSuchPath(f"{path} not in session {session.id}")
        key = rec.key
        with self._cond:
            while True:
                entry = self._entries.get(key)
                if entry is not None and entry.state == PRESENT:
                    entry.lock_count += 1
                    self._bump(entry)
                    self._write_sidecar(entry)
                    return self._handle(session, path, entry)
                if entry is not None and entry.state == TRANSFERRING:
                    self._cond.wait()
                    continue
                self._make_room(rec.size)
                entry = CacheEntry(
                    key=key,
                    local_path=os.path.join(self._entry_dir(key), "data"),
                    size=rec.size,
                    state=TRANSFERRING,
                )
                self._entries[key] = entry
                break
        try:
            data = self.registry.fetch(rec.as_entry(path))
            try:
                os.makedirs(os.path.dirname(entry.local_path), exist_ok=True)
                with open(entry.local_path, "wb") as fh:
                    fh.write(data)
            except OSError as exc:
                raise IoError(f"cannot cache {path}: {exc}") from exc
        except Exception:
            with self._cond:
                self._entries.pop(key, None)
                self._cond.notify_all()
            shutil.rmtree(self._entry_dir(key), ignore_errors=True)
            raise
        with self._cond:
            entry.state = PRESENT
            entry.size = len(data)
            entry.lock_count = 1
            self._bump(entry)
            self._write_sidecar(entry)
            self._cond.notify_all()
            return self._handle(session, path, entry)

    def _handle(self, session: Session, path: str, entry: CacheEntry) -> FileHandle:
        return FileHandle(
            id=uuid.uuid4().hex,
            session_id=session.id,
            path=path,
            key=entry.key,
            size=entry.size,
        )

    def _bump(self, entry: CacheEntry) -> None:
        now = self.clock()
        if entry.usage_count > 0:
            dt = max(0.0, now - entry.last_access)
            entry.usage_frequency = 1.0 + entry.usage_frequency * math.exp(
                -math.log(2.0) * dt / FREQ_HALF_LIFE
            )
        else:
            entry.usage_frequency = 1.0
        entry.usage_count += 1
        entry.last_access = now

    def read(self, handle: FileHandle, offset: int = 0, length: Optional[int] = None) -> bytes:
        with self._lock:
            if handle.closed:
                raise StaleHandle(f"handle for {handle.path} is closed")
            entry = self._entries.get(handle.key)
            if entry is None or entry.state != PRESENT:
                raise StaleHandle(f"cache entry for {handle.path} vanished")
            local = entry.local_path
        try:
            with open(local, "rb") as fh:
                fh.seek(offset)
                return fh.read() if length is None else fh.read(length)
        except OSError as exc:
            raise IoError(f"read failed for {handle.path}: {exc}") from exc

    def close(self, handle: FileHandle) -> None:
        with self._lock:
            if handle.closed:
                raise StaleHandle(f"handle for {handle.path} already closed")
            handle.closed = True
            entry = self._entries.get(handle.key)
            if entry is not None and entry.lock_count > 0:
                entry.lock_count -= 1

    # -- metadata (never transfers) ---------------------------------------

    def stat(self, session: Session, path: str) -> FileStat:
        rec = session.files.get(path)
        if rec is not None:
            return FileStat(path=path, is_dir=False, size=rec.size)
        if path in session.dirs:
            return FileStat(path=path, is_dir=True, size=0)
        raise NoSuchPath(f"{path} not in session {session.id}")

    def listdir(self, session: Session, path: str) -> List[str]:
        if path != "/" and path not in session.dirs:
            raise NoSuchPath(f"{path} is not a session directory")
        prefix = path.rstrip("/") + "/"
        names: Set[str] = set()
        for p in list(session.files) + sorted(session.dirs):
            if p != path and p.startswith(prefix):
                names.add(p[len(prefix):].split("/", 1)[0])
        return sorted(names)

    # -- eviction ----------------------------------------------------------

    def _used(self) -> int:
        return sum(
            e.size for e in self._entries.values() if e.state in (PRESENT, TRANSFERRING)
        )

    def score(self, entry: CacheEntry) -> float:
        now = self.clock()
        if self._scorer is not None:
            return self._scorer(entry, now)
        w_count, w_freq, w_recency = self.config.eviction_weights
        age = max(0.0, now - entry.last_access)
        return (
            w_count * math.log1p(entry.usage_count)
            + w_freq * entry.usage_frequency
            + w_recency * (1.0 / (1.0 + age))
        )

    def evict(self, needed: int) -> List[CacheKey]:
        """Evict lowest-scoring unlocked entries until free space >= needed."""
        with self._cond:
            keys, _ = self._evict_locked(needed)
            return keys

    def _evict_locked(self, needed: int) -> Tuple[List[CacheKey], int]:
        free = self.config.capacity - self._used()
        if needed <= free:
            return [], 0
        candidates = [
            e for e in self._entries.values() if e.state == PRESENT and e.lock_count == 0
        ]
        unlocked = sum(e.size for e in candidates)
        if unlocked < needed - free:
            raise EvictionImpossible(
                f"cannot free {needed} bytes: only {unlocked} unlocked, "
                f"{needed - free} more required"
            )
        candidates.sort(key=self.score)
        evicted: List[CacheKey] = []
        freed = 0
        for entry in candidates:
            if free >= needed:
                break
            self._discard(entry)
            free += entry.size
            freed += entry.size
            evicted.append(entry.key)
        return evicted, freed

    def _discard(self, entry: CacheEntry) -> None:
        shutil.rmtree(os.path.dirname(entry.local_path), ignore_errors=True)
        self._entries.pop(entry.key, None)

    def _make_room(self, size: int) -> None:
        self._evict_locked(size)

    def gc_sweep(self) -> GcReport:
        """Restore the capacity invariant; best-effort, never raises."""
        with self._cond:
            over = self._used() - self.config.capacity
            if over <= 0:
                return GcReport()
            try:
                evicted, freed = self._evict_locked(0)
                return GcReport(evicted=evicted, bytes_freed=freed)
            except EvictionImpossible:
                # evict whatever is unlocked, then record the shortfall
                candidates = sorted(
                    (
                        e
                        for e in self._entries.values()
                        if e.state == PRESENT and e.lock_count == 0
                    ),
                    key=self.score,
                )
                evicted = []
                freed = 0
                for entry in candidates:
                    self._discard(entry)
                    freed += entry.size
                    evicted.append(entry.key)
                warning = (
                    f"cache over capacity by {over} bytes; "
                    f"freed {freed}, remainder is locked"
                )
                self.warnings.append(warning)
                log.warning(warning)
                return GcReport(evicted=evicted, bytes_freed=freed, warning=warning)

    # -- background gc -----------------------------------------------------

    def start_gc(self) -> None:
        if self._gc_thread is not None:
            return
        self._gc_stop.clear()

        def loop():
            while not self._gc_stop.wait(self.config.gc_period):
                self.gc_sweep()

        self._gc_thread = threading.Thread(target=loop, name="dms-gc", daemon=True)
        self._gc_thread.start()

    def stop_gc(self) -> None:
        if self._gc_thread is not None:
            self._gc_stop.set()
            self._gc_thread.join(timeout=5)
            self._gc_thread = None

    # -- observability -------------------------------------------------------

    def cache_stats(self) -> dict:
        with self._lock:
            present = [e for e in self._entries.values() if e.state == PRESENT]
            return {
                "capacity": self.config.capacity,
                "used": self._used(),
                "entries": len(present),
                "locked": sum(1 for e in present if e.lock_count > 0),
                "lock_total": sum(e.lock_count for e in present),
                "warnings": list(self.warnings),
            }

    def entry(self, key: CacheKey) -> Optional[CacheEntry]:
        with self._lock:
            return self._entries.get(key)

    def entries(self) -> List[CacheEntry]:
        with self._lock:
            return list(self._entries.values())

    def total_locks(self) -> int:
        with self._lock:
            return sum(e.lock_count for e in self._entries.values())


class SessionFilesystem:
    """In-process POSIX-like view over one session.

    This is the default filesystem front: the simulated container runtime
    drives it directly. An OS-level user-space mount adapter can wrap the
    same five calls.
    """

    def __init__(self, dms: DataManager, session: Session):
        self.dms = dms
        self.session = session

    def open(self, path: str) -> FileHandle:
        return self.dms.open_file(self.session, path)

    def read(self, handle: FileHandle, offset: int = 0, length: Optional[int] = None) -> bytes:
        return self.dms.read(handle, offset, length)

    def close(self, handle: FileHandle) -> None:
        self.dms.close(handle)

    def stat(self, path: str) -> FileStat:
        return self.dms.stat(self.session, path)

    def listdir(self, path: str) -> List[str]:
        return self.dms.listdir(self.session, path)

    def read_file(self, path: str) -> bytes:
        handle = self.open(path)
        try:
            return self.read(handle)
        finally:
            self.close(handle)
