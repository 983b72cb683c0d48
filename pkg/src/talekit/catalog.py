"""Hierarchical metadata catalog: collections, folders, items, file references.

All external data is held strictly by reference: an Item carries FileRefs
whose ProvenanceRecord (source URL, protocol, provider, identifier, original
name, optional checksum) is frozen at registration and survives any amount of
moving, renaming, or annotating. No catalog operation ever touches data bytes.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

from .errors import (
    CycleDetected,
    DuplicateName,
    InvalidName,
    KindMismatch,
    NotAContainer,
    UnknownNode,
    UnknownParent,
)
from .storage import JournalStore, Table

COLLECTION = "Collection"
FOLDER = "Folder"
ITEM = "Item"

MAX_NAME_BYTES = 255


def validate_name(name: str) -> str:
    """Reject names unusable as POSIX path components."""
    if not name:
        raise InvalidName("name is empty")
    if "/" in name:
        raise InvalidName(f"name contains '/': {name!r}")
    if "\x00" in name:
        raise InvalidName("name contains NUL")
    if name in (".", ".."):
        raise InvalidName(f"name {name!r} is reserved")
    if len(name.encode("utf-8")) > MAX_NAME_BYTES:
        raise InvalidName(f"name longer than {MAX_NAME_BYTES} bytes")
    return name


@dataclass(frozen=True)
class ProvenanceRecord:
    """Immutable origin of one registered file."""

    source_url: str
    protocol: str
    provider: str
    identifier: str
    original_name: str
    checksum: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "source_url": self.source_url,
            "protocol": self.protocol,
            "provider": self.provider,
            "identifier": self.identifier,
            "original_name": self.original_name,
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceRecord":
        return cls(
            source_url=d["source_url"],
            protocol=d["protocol"],
            provider=d["provider"],
            identifier=d["identifier"],
            original_name=d["original_name"],
            checksum=d.get("checksum"),
        )


@dataclass
class Node:
    id: str
    kind: str
    name: str
    parent: Optional[str]
    metadata: Dict[str, str] = field(default_factory=dict)
    created: float = 0.0
    modified: float = 0.0
    deleted: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "name": self.name,
            "parent": self.parent,
            "metadata": dict(self.metadata),
            "created": self.created,
            "modified": self.modified,
            "deleted": self.deleted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(
            id=d["id"],
            kind=d["kind"],
            name=d["name"],
            parent=d.get("parent"),
            metadata=dict(d.get("metadata", {})),
            created=d.get("created", 0.0),
            modified=d.get("modified", 0.0),
            deleted=d.get("deleted", False),
        )


@dataclass
class FileRef:
    id: str
    item: str
    size: int
    provenance: ProvenanceRecord

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "item": self.item,
            "size": self.size,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FileRef":
        return cls(
            id=d["id"],
            item=d["item"],
            size=d["size"],
            provenance=ProvenanceRecord.from_dict(d["provenance"]),
        )


_PARENT_KINDS = {
    COLLECTION: frozenset(),
    FOLDER: frozenset({COLLECTION, FOLDER}),
    ITEM: frozenset({FOLDER}),
}


class Catalog:
    """In-memory node tree, optionally journal-backed.

    Concurrent reads are fine; writes are serialized by a coarse lock.
    Deleted nodes are tombstoned, never purged, so ids are never reused
    and sessions holding a snapshot never see a dangling id.
    """

    def __init__(self, store: Optional[JournalStore] = None):
        self._lock = threading.RLock()
        self._nodes_tbl = Table(store, "catalog.nodes")
        self._files_tbl = Table(store, "catalog.files")
        self._nodes: Dict[str, Node] = {
            k: Node.from_dict(v) for k, v in self._nodes_tbl.items()
        }
        self._files: Dict[str, FileRef] = {
            k: FileRef.from_dict(v) for k, v in self._files_tbl.items()
        }
        # children index: parent id (or None for roots) -> {name: node id}
        self._children: Dict[Optional[str], Dict[str, str]] = {}
        for node in self._nodes.values():
            if not node.deleted:
                self._children.setdefault(node.parent, {})[node.name] = node.id
        self._item_files: Dict[str, List[str]] = {}
        for ref in self._files.values():
            self._item_files.setdefault(ref.item, []).append(ref.id)

    # -- internals ------------------------------------------------------

    def _save(self, node: Node) -> None:
        self._nodes_tbl.put(node.id, node.to_dict())

    def _require(self, node_id: str) -> Node:
        node = self._nodes.get(node_id)
        if node is None or node.deleted:
            raise UnknownNode(f"no such node: {node_id}")
        return node

    def _siblings(self, parent: Optional[str]) -> Dict[str, str]:
        return self._children.setdefault(parent, {})

    def _touch(self, node: Node) -> None:
        node.modified = time.time()
        self._save(node)

    def _new_node(self, kind: str, name: str, parent: Optional[str]) -> Node:
        now = time.time()
        node = Node(
            id=uuid.uuid4().hex,
            kind=kind,
            name=name,
            parent=parent,
            created=now,
            modified=now,
        )
        self._nodes[node.id] = node
        self._siblings(parent)[name] = node.id
        self._save(node)
        return node

    # -- creation -------------------------------------------------------

    def create_collection(self, name: str) -> Node:
        with self._lock:
            validate_name(name)
            if name in self._siblings(None):
                raise DuplicateName(f"collection {name!r} already exists")
            return self._new_node(COLLECTION, name, None)

    def create_folder(self, parent: str, name: str) -> Node:
        with self._lock:
            parent_node = self._nodes.get(parent)
            if parent_node is None or parent_node.deleted:
                raise UnknownParent(f"no such parent: {parent}")
            if parent_node.kind not in (COLLECTION, FOLDER):
                raise KindMismatch(f"{parent_node.kind} cannot contain a Folder")
            validate_name(name)
            if name in self._siblings(parent):
                raise DuplicateName(f"{name!r} already exists under {parent_node.name!r}")
            node = self._new_node(FOLDER, name, parent)
            self._touch(parent_node)
            return node

    def create_item(self, parent: str, name: str) -> Node:
        with self._lock:
            parent_node = self._nodes.get(parent)
            if parent_node is None or parent_node.deleted:
                raise UnknownParent(f"no such parent: {parent}")
            if parent_node.kind != FOLDER:
                raise KindMismatch("Items parent to Folder")
            validate_name(name)
            if name in self._siblings(parent):
                raise DuplicateName(f"{name!r} already exists under {parent_node.name!r}")
            node = self._new_node(ITEM, name, parent)
            self._touch(parent_node)
            return node

    def unique_child_name(self, parent: Optional[str], name: str) -> str:
        """Next free sibling name, suffixing ' (n)' on collision."""
        with self._lock:
            taken = self._siblings(parent)
            if name not in taken:
                return name
            n = 1
            while f"{name} ({n})" in taken:
                n += 1
            return f"{name} ({n})"

    def attach_file(self, item: str, provenance: ProvenanceRecord, size: int) -> FileRef:
        with self._lock:
            node = self._require(item)
            if node.kind != ITEM:
                raise KindMismatch("file refs attach to Items")
            if size < 0:
                raise InvalidName("size must be >= 0")
            ref = FileRef(id=uuid.uuid4().hex, item=item, size=size, provenance=provenance)
            self._files[ref.id] = ref
            self._item_files.setdefault(item, []).append(ref.id)
            self._files_tbl.put(ref.id, ref.to_dict())
            self._touch(node)
            return ref

    # -- mutation -------------------------------------------------------

    def move_node(self, node_id: str, new_parent: str) -> Node:
        with self._lock:
            node = self._require(node_id)
            parent_node = self._nodes.get(new_parent)
            if parent_node is None or parent_node.deleted:
                raise UnknownParent(f"no such parent: {new_parent}")
            if node.kind == COLLECTION or parent_node.kind not in _PARENT_KINDS[node.kind]:
                raise KindMismatch(
                    f"{node.kind} cannot be placed under {parent_node.kind}"
                )
            # walk up from the destination; hitting the node means a cycle
            cursor: Optional[str] = new_parent
            while cursor is not None:
                if cursor == node_id:
                    raise CycleDetected(f"{node.name!r} cannot move under its own subtree")
                cursor = self._nodes[cursor].parent
            if new_parent != node.parent and node.name in self._siblings(new_parent):
                raise DuplicateName(f"{node.name!r} already exists in destination")
            if new_parent != node.parent:
                self._siblings(node.parent).pop(node.name, None)
                self._siblings(new_parent)[node.name] = node.id
                node.parent = new_parent
                self._touch(node)
                self._touch(parent_node)
            return node

    def rename_node(self, node_id: str, new_name: str) -> Node:
        with self._lock:
            node = self._require(node_id)
            validate_name(new_name)
            if new_name == node.name:
                return node
            if new_name in self._siblings(node.parent):
                raise DuplicateName(f"{new_name!r} already exists among siblings")
            self._siblings(node.parent).pop(node.name, None)
            self._siblings(node.parent)[new_name] = node.id
            node.name = new_name
            self._touch(node)
            return node

    def annotate(self, node_id: str, key: str, value: str) -> Node:
        with self._lock:
            node = self._require(node_id)
            node.metadata[key] = value
            self._touch(node)
            return node

    def delete_node(self, node_id: str) -> None:
        """Soft delete: tombstone the subtree; ids are never reused."""
        with self._lock:
            node = self._require(node_id)
            for desc in list(self.walk(node_id)):
                desc_node = self._nodes[desc.id]
                desc_node.deleted = True
                self._siblings(desc_node.parent).pop(desc_node.name, None)
                self._save(desc_node)
            node.deleted = True
            self._siblings(node.parent).pop(node.name, None)
            self._save(node)

    # -- reads ----------------------------------------------------------

    def get_node(self, node_id: str) -> Node:
        with self._lock:
            return self._require(node_id)

    def list_children(self, node_id: str) -> List[Node]:
        with self._lock:
            node = self._require(node_id)
            if node.kind not in (COLLECTION, FOLDER):
                raise NotAContainer(f"{node.kind} has no children")
            kids = self._siblings(node_id)
            return [self._nodes[kids[name]] for name in sorted(kids)]

    def list_collections(self) -> List[Node]:
        with self._lock:
            roots = self._siblings(None)
            return [self._nodes[roots[name]] for name in sorted(roots)]

    def file_refs(self, item_id: str) -> List[FileRef]:
        with self._lock:
            node = self._require(item_id)
            if node.kind != ITEM:
                raise KindMismatch(f"{node.kind} has no file refs")
            return [self._files[fid] for fid in self._item_files.get(item_id, [])]

    def walk(self, node_id: str) -> Iterator[Node]:
        """Depth-first descendants of a node (children sorted by name)."""
        node = self._require(node_id)
        if node.kind == ITEM:
            return
        for child in self.list_children(node_id):
            yield child
            if child.kind != ITEM:
                yield from self.walk(child.id)

    def provenance_multiset(self, node_id: Optional[str] = None) -> List[tuple]:
        """Sorted multiset of provenance tuples, for immutability checks."""
        with self._lock:
            if node_id is None:
                refs = list(self._files.values())
            else:
                refs = []
                node = self._require(node_id)
                items = [node] if node.kind == ITEM else [
                    n for n in self.walk(node_id) if n.kind == ITEM
                ]
                for item in items:
                    refs.extend(self._files[fid] for fid in self._item_files.get(item.id, []))
            return sorted(
                (
                    r.provenance.source_url,
                    r.provenance.protocol,
                    r.provenance.provider,
                    r.provenance.identifier,
                    r.provenance.original_name,
                    r.provenance.checksum or "",
                )
                for r in refs
            )
