"""Pluggable data providers: identifier resolution and byte transfer.

A provider resolves dataset identifiers it recognizes (by scheme prefix) into
a :class:`DatasetDescriptor` and moves bytes for entries whose protocol it
handles. Three providers ship built in: ``mock:`` (in-memory
fixture trees, loadable from JSON), ``file:`` (local directories), and
``https:`` (single web resources). Anything heavier implements the same
interface.

Every provider counts the bytes it has delivered (``transfer_counter``) so
tests can assert the shallow-copy guarantee: metadata operations move zero
bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .errors import (
    ChecksumMismatch,
    CyclicDataset,
    DuplicateProvider,
    ProviderUnavailable,
    TransferFailed,
    UnknownIdentifier,
    UnsupportedProtocol,
)

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.1  # seconds, doubled per attempt


def sha256_digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class FileEntry:
    original_name: str
    relative_path: str
    size: int
    source_url: str
    protocol: str
    checksum: Optional[str] = None


@dataclass
class DatasetDescriptor:
    name: str
    provider: str
    identifier: str
    entries: List[FileEntry] = field(default_factory=list)
    sub_datasets: List[str] = field(default_factory=list)
    total_size: int = 0

    def own_size(self) -> int:
        return sum(e.size for e in self.entries)


class Provider:
    """Base provider: subclasses implement ``_resolve`` and ``_read``."""

    name: str = "abstract"
    identifier_schemes: tuple[str, ...] = ()
    protocols: tuple[str, ...] = ()

    def __init__(self):
        self._counter_lock = threading.Lock()
        self._transfer_counter = 0
        self.available = True

    @property
    def transfer_counter(self) -> int:
        with self._counter_lock:
            return self._transfer_counter

    def _count(self, n: int) -> None:
        with self._counter_lock:
            self._transfer_counter += n

    def recognizes(self, identifier: str) -> bool:
        return any(identifier.startswith(s) for s in self.identifier_schemes)

    def resolve(self, identifier: str) -> DatasetDescriptor:
        if not self.available:
            raise ProviderUnavailable(f"provider {self.name!r} is unreachable")
        return self._resolve(identifier)

    def fetch(self, entry: FileEntry, offset: int = 0, length: Optional[int] = None) -> bytes:
        if not self.available:
            raise ProviderUnavailable(f"provider {self.name!r} is unreachable")
        data = self._read(entry, offset, length)
        self._count(len(data))
        return data

    def _resolve(self, identifier: str) -> DatasetDescriptor:
        raise NotImplementedError

    def _read(self, entry: FileEntry, offset: int, length: Optional[int]) -> bytes:
        raise NotImplementedError


class MockProvider(Provider):
    """In-memory fixture datasets, with sub-dataset references.

    Fixture JSON:
        {"datasets": {"<id>": {"name": ..., "entries": [
            {"path": ..., "size": ..., "content_b64": ...}], "sub": [...]}}}
    """

    name = "mock"
    identifier_schemes = ("mock:",)
    protocols = ("mock",)

    def __init__(self):
        super().__init__()
        self._datasets: Dict[str, dict] = {}
        self._fail_fetches = 0
        self._lock = threading.Lock()

    def add_dataset(
        self,
        identifier: str,
        name: Optional[str] = None,
        files: Optional[Dict[str, bytes]] = None,
        sub: Optional[List[str]] = None,
    ) -> None:
        key = self._key(identifier)
        entries = {}
        for path, content in (files or {}).items():
            if path in entries:
                raise ValueError(f"duplicate entry path {path!r} in {identifier}")
            entries[path] = content
        self._datasets[key] = {
            "name": name or key,
            "files": entries,
            "sub": [self._key(s) for s in (sub or [])],
        }

    def load_fixtures(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for ident, ds in doc.get("datasets", {}).items():
            files = {}
            for ent in ds.get("entries", []):
                content = base64.b64decode(ent.get("content_b64", ""))
                declared = ent.get("size")
                if declared is not None and declared != len(content):
                    raise ValueError(
                        f"fixture {ident}:{ent['path']} declares size {declared}, "
                        f"content is {len(content)} bytes"
                    )
                files[ent["path"]] = content
            self.add_dataset(ident, ds.get("name"), files, ds.get("sub"))

    def fail_next_fetches(self, n: int) -> None:
        with self._lock:
            self._fail_fetches = n

    @staticmethod
    def _key(identifier: str) -> str:
        return identifier[5:] if identifier.startswith("mock:") else identifier

    def recognizes(self, identifier: str) -> bool:
        return identifier.startswith("mock:") and self._key(identifier) in self._datasets

    def _resolve(self, identifier: str) -> DatasetDescriptor:
        key = self._key(identifier)
        ds = self._datasets.get(key)
        if ds is None:
            raise UnknownIdentifier(f"mock provider does not define {identifier!r}")
        entries = [
            FileEntry(
                original_name=os.path.basename(path) or path,
                relative_path=path,
                size=len(content),
                source_url=f"mock://{key}/{path}",
                protocol="mock",
                checksum=sha256_digest(content),
            )
            for path, content in sorted(ds["files"].items())
        ]
        return DatasetDescriptor(
            name=ds["name"],
            provider=self.name,
            identifier=f"mock:{key}",
            entries=entries,
            sub_datasets=[f"mock:{s}" for s in ds["sub"]],
        )

    def _read(self, entry: FileEntry, offset: int, length: Optional[int]) -> bytes:
        with self._lock:
            if self._fail_fetches > 0:
                self._fail_fetches -= 1
                raise TransferFailed(f"injected transfer failure for {entry.source_url}")
        if not entry.source_url.startswith("mock://"):
            raise TransferFailed(f"not a mock url: {entry.source_url}")
        key, _, path = entry.source_url[len("mock://"):].partition("/")
        ds = self._datasets.get(key)
        if ds is None or path not in ds["files"]:
            raise TransferFailed(f"mock content missing for {entry.source_url}")
        content = ds["files"][path]
        end = len(content) if length is None else offset + length
        return content[offset:end]


class LocalProvider(Provider):
    """Registers local files or directory trees by ``file:<path>``."""

    name = "local"
    identifier_schemes = ("file:",)
    protocols = ("local",)

    @staticmethod
    def _path(identifier: str) -> str:
        return identifier[5:]

    def recognizes(self, identifier: str) -> bool:
        return identifier.startswith("file:") and os.path.exists(self._path(identifier))

    def _resolve(self, identifier: str) -> DatasetDescriptor:
        root = self._path(identifier)
        if not os.path.exists(root):
            raise UnknownIdentifier(f"no such path: {root}")
        entries = []
        if os.path.isfile(root):
            entries.append(self._entry(root, os.path.basename(root)))
            ds_name = os.path.basename(root)
        else:
            for dirpath, dirnames, filenames in os.walk(root):
                dirnames.sort()
                for fname in sorted(filenames):
                    full = os.path.join(dirpath, fname)
                    rel = os.path.relpath(full, root)
                    entries.append(self._entry(full, rel))
            ds_name = os.path.basename(os.path.normpath(root))
        return DatasetDescriptor(
            name=ds_name,
            provider=self.name,
            identifier=identifier,
            entries=entries,
        )

    def _entry(self, full: str, rel: str) -> FileEntry:
        return FileEntry(
            original_name=os.path.basename(full),
            relative_path=rel.replace(os.sep, "/"),
            size=os.path.getsize(full),
            source_url="file:" + os.path.abspath(full),
            protocol="local",
        )

    def _read(self, entry: FileEntry, offset: int, length: Optional[int]) -> bytes:
        path = entry.source_url[5:]
        try:
            with open(path, "rb") as fh:
                fh.seek(offset)
                return fh.read() if length is None else fh.read(length)
        except OSError as exc:
            raise TransferFailed(f"cannot read {path}: {exc}") from exc


class HttpsProvider(Provider):
    """Single web resource by URL. The opener is injectable for tests."""

    name = "https"
    identifier_schemes = ("https:", "http:")
    protocols = ("http",)

    def __init__(self, opener: Optional[Callable[[str], bytes]] = None):
        super().__init__()
        self._opener = opener or self._default_opener

    @staticmethod
    def _default_opener(url: str) -> bytes:
        try:
            with urllib.request.urlopen(url, timeout=30) as resp:
                return resp.read()
        except Exception as exc:  # urllib raises a zoo of error types
            raise TransferFailed(f"HTTP fetch failed for {url}: {exc}") from exc

    def _resolve(self, identifier: str) -> DatasetDescriptor:
        data = self._opener(identifier)
        name = os.path.basename(identifier.rstrip("/")) or identifier
        entry = FileEntry(
            original_name=name,
            relative_path=name,
            size=len(data),
            source_url=identifier,
            protocol="http",
            checksum=sha256_digest(data),
        )
        return DatasetDescriptor(
            name=name, provider=self.name, identifier=identifier, entries=[entry]
        )

    def _read(self, entry: FileEntry, offset: int, length: Optional[int]) -> bytes:
        data = self._opener(entry.source_url)
        end = len(data) if length is None else offset + length
        return data[offset:end]


class ProviderRegistry:
    """Ordered provider set; resolution precedence is registration order."""

    def __init__(self, sleeper: Callable[[float], None] = time.sleep):
        self._providers: List[Provider] = []
        self._by_protocol: Dict[str, Provider] = {}
        self._sleeper = sleeper
        self._lock = threading.Lock()

    def register_provider(self, provider: Provider) -> None:
        with self._lock:
            if any(p.name == provider.name for p in self._providers):
                raise DuplicateProvider(f"provider {provider.name!r} already registered")
            self._providers.append(provider)
            for proto in provider.protocols:
                self._by_protocol.setdefault(proto, provider)

    def providers(self) -> List[Provider]:
        with self._lock:
            return list(self._providers)

    def provider(self, name: str) -> Optional[Provider]:
        with self._lock:
            for p in self._providers:
                if p.name == name:
                    return p
        return None

    def total_bytes_transferred(self) -> int:
        return sum(p.transfer_counter for p in self.providers())

    # -- resolve ----------------------------------------------------------

    def resolve(self, identifier: str) -> DatasetDescriptor:
        """Resolve an identifier, rolling sub-dataset sizes into total_size."""
        return self._resolve_sized(identifier, ())

    def _resolve_sized(self, identifier: str, path: tuple) -> DatasetDescriptor:
        if identifier in path:
            raise CyclicDataset(" -> ".join(path + (identifier,)))
        desc = self._resolve_one(identifier)
        total = desc.own_size()
        for sub in desc.sub_datasets:
            total += self._resolve_sized(sub, path + (identifier,)).total_size
        desc.total_size = total
        return desc

    def _resolve_one(self, identifier: str) -> DatasetDescriptor:
        matched_scheme = False
        for provider in self.providers():
            if not any(identifier.startswith(s) for s in provider.identifier_schemes):
                continue
            matched_scheme = True
            if provider.recognizes(identifier):
                return provider.resolve(identifier)
        if matched_scheme:
            raise UnknownIdentifier(f"no provider recognizes {identifier!r}")
        raise UnknownIdentifier(f"no provider handles the scheme of {identifier!r}")

    # -- fetch ------------------------------------------------------------

    def fetch(self, entry: FileEntry, offset: int = 0, length: Optional[int] = None) -> bytes:
        """Fetch bytes for an entry, with retries and checksum verification.

        TransferFailed is retried with exponential backoff; ChecksumMismatch
        is not. The checksum is verified only on full-content fetches.
        """
        provider = self._by_protocol.get(entry.protocol)
        if provider is None:
            raise UnsupportedProtocol(f"no transfer adapter for {entry.protocol!r}")
        delay = RETRY_BASE_DELAY
        last: Optional[TransferFailed] = None
        for attempt in range(1 + RETRY_ATTEMPTS):
            try:
                data = provider.fetch(entry, offset, length)
                break
            except TransferFailed as exc:
                last = exc
                if attempt < RETRY_ATTEMPTS:
                    self._sleeper(delay)
                    delay *= 2
        else:
            raise last  # type: ignore[misc]
        if offset == 0 and length is None and entry.checksum:
            expected = entry.checksum
            if not expected.startswith("sha256:"):
                expected = "sha256:" + expected
            if sha256_digest(data) != expected:
                raise ChecksumMismatch(
                    f"checksum mismatch for {entry.source_url}: expected {expected}"
                )
        return data
