"""Embedded key-value store with write-ahead journaling.

State is a set of named tables (``namespace -> key -> dict``). Every mutation
is appended to an on-disk journal before the in-memory tables change; opening
a store replays the journal. The journal is newline-delimited JSON behind a
``WTCAT1`` magic header. The format is internal and versioned by that header;
a partially written trailing line (crash mid-append) is tolerated and dropped.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Any, Dict, Iterator, Optional

from .errors import JournalCorrupt

MAGIC = "WTCAT1"


class JournalStore:
    """Append-only journaled store backing the persistent modules.

    Thread-safe; a single lock serializes appends. ``path=None`` gives a
    purely in-memory store (used by tests and throwaway engines).
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._lock = threading.Lock()
        self._tables: Dict[str, Dict[str, dict]] = {}
        self._fh = None
        if path is not None:
            self._open(path)

    def _open(self, path: str) -> None:
        exists = os.path.exists(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if exists:
            good_end = self._replay(path)
            if good_end < os.path.getsize(path):
                os.truncate(path, good_end)  # drop the torn tail before appending
            self._fh = open(path, "a", encoding="utf-8")
        else:
            self._fh = open(path, "w", encoding="utf-8")
            self._fh.write(MAGIC + "\n")
            self._fh.flush()

    def _replay(self, path: str) -> int:
        """Apply journal records; returns the offset after the last good one."""
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if header.rstrip("\n") != MAGIC:
                raise JournalCorrupt(f"bad journal header {header!r} in {path}")
            good_end = fh.tell()
            while True:
                line = fh.readline()
                if not line:
                    break
                if not line.endswith("\n"):
                    break  # torn tail from an interrupted append
                stripped = line.strip()
                if stripped:
                    try:
                        rec = json.loads(stripped)
                    except json.JSONDecodeError:
                        break
                    self._apply(rec)
                good_end = fh.tell()
            return good_end

    def _apply(self, rec: dict) -> None:
        op = rec.get("op")
        ns, key = rec.get("ns"), rec.get("key")
        if op == "put":
            self._tables.setdefault(ns, {})[key] = rec.get("val", {})
        elif op == "del":
            self._tables.get(ns, {}).pop(key, None)

    def _append(self, rec: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            self._fh.flush()

    # -- public API -----------------------------------------------------

    def put(self, ns: str, key: str, val: dict) -> None:
        with self._lock:
            self._append({"op": "put", "ns": ns, "key": key, "val": val})
            self._tables.setdefault(ns, {})[key] = val

    def delete(self, ns: str, key: str) -> None:
        with self._lock:
            self._append({"op": "del", "ns": ns, "key": key})
            self._tables.get(ns, {}).pop(key, None)

    def get(self, ns: str, key: str) -> Optional[dict]:
        with self._lock:
            val = self._tables.get(ns, {}).get(key)
            return dict(val) if val is not None else None

    def items(self, ns: str) -> Iterator[tuple[str, dict]]:
        with self._lock:
            snapshot = [(k, dict(v)) for k, v in self._tables.get(ns, {}).items()]
        return iter(snapshot)

    def table(self, ns: str) -> Dict[str, dict]:
        with self._lock:
            return {k: dict(v) for k, v in self._tables.get(ns, {}).items()}

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class Table:
    """Convenience view of one namespace: dict-like, persisted on write."""

    def __init__(self, store: Optional[JournalStore], ns: str):
        self.store = store
        self.ns = ns
        self._mem: Dict[str, dict] = store.table(ns) if store is not None else {}

    def __contains__(self, key: str) -> bool:
        return key in self._mem

    def __len__(self) -> int:
        return len(self._mem)

    def get(self, key: str) -> Optional[dict]:
        return self._mem.get(key)

    def put(self, key: str, val: dict) -> None:
        if self.store is not None:
            self.store.put(self.ns, key, val)
        self._mem[key] = val

    def delete(self, key: str) -> None:
        if self.store is not None:
            self.store.delete(self.ns, key)
        self._mem.pop(key, None)

    def keys(self):
        return list(self._mem.keys())

    def values(self):
        return list(self._mem.values())

    def items(self):
        return list(self._mem.items())


def canonical_json(value: Any) -> str:
    """Deterministic JSON used for digests and manifest fixpoints."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
