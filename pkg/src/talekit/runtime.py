"""Simulated container runtime and reverse proxy routing table.

The runtime implements the adapter surface a real container engine would
(create/destroy volumes and containers, mount, start, stop) with in-process
records, deterministic ids given a seed, an injectable per-operation fault
hook, and a JSON-lines event log that tests assert against. The policy flag
``intra_container_comm`` is recorded but (being a single simulated host)
has nothing to enforce.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import NoRoute, TaleKitError
from .storage import JournalStore, Table


class RuntimeFault(TaleKitError):
    """An injected or simulated container-engine failure."""

    http_status = 500


@dataclass
class ContainerRecord:
    id: str
    image_digest: str
    volume_id: str
    status: str = "created"  # created | running | stopped | destroyed
    internal_port: Optional[int] = None


@dataclass
class VolumeRecord:
    id: str
    destroyed: bool = False


class SimulatedRuntime:
    """Single-host runtime standing in for a real engine plus scheduler."""

    def __init__(
        self,
        store: Optional[JournalStore] = None,
        seed: int = 0,
        host: str = "node-0",
        base_port: int = 30000,
    ):
        self.host = host
        self.intra_container_comm = False
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._tbl = Table(store, "runtime.objects")
        self._containers: Dict[str, ContainerRecord] = {}
        self._volumes: Dict[str, VolumeRecord] = {}
        self._mounts: Dict[str, object] = {}  # volume id -> filesystem front
        self._counter = 0
        self._next_port = base_port
        self.event_log: list[dict] = []
        self._faults: Dict[str, int] = {}
        for key, rec in self._tbl.items():
            if key == "__meta__":
                self._counter = rec.get("counter", 0)
                self._next_port = rec.get("next_port", base_port)
            elif rec.get("type") == "container":
                self._containers[key] = ContainerRecord(
                    id=key,
                    image_digest=rec["image_digest"],
                    volume_id=rec["volume_id"],
                    status=rec["status"],
                    internal_port=rec.get("internal_port"),
                )
            elif rec.get("type") == "volume":
                self._volumes[key] = VolumeRecord(id=key, destroyed=rec["destroyed"])

    # -- bookkeeping ------------------------------------------------------

    def _event(self, op: str, obj_id: str) -> None:
        self.event_log.append({"ts": time.time(), "op": op, "id": obj_id})

    def _check_fault(self, op: str) -> None:
        with self._lock:
            remaining = self._faults.get(op, 0)
            if remaining > 0:
                self._faults[op] = remaining - 1
                raise RuntimeFault(f"injected fault in {op}")

    def inject_fault(self, op: str, times: int = 1) -> None:
        with self._lock:
            self._faults[op] = self._faults.get(op, 0) + times

    def _new_id(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}-{self._counter:04d}-{self._rng.getrandbits(32):08x}"

    def _save_meta(self) -> None:
        self._tbl.put("__meta__", {"counter": self._counter, "next_port": self._next_port})

    def _save_container(self, c: ContainerRecord) -> None:
        self._tbl.put(
            c.id,
            {
                "type": "container",
                "image_digest": c.image_digest,
                "volume_id": c.volume_id,
                "status": c.status,
                "internal_port": c.internal_port,
            },
        )

    def _save_volume(self, v: VolumeRecord) -> None:
        self._tbl.put(v.id, {"type": "volume", "destroyed": v.destroyed})

    # -- adapter surface ----------------------------------------------------

    def create_volume(self) -> str:
        self._check_fault("create_volume")
        with self._lock:
            vol = VolumeRecord(id=self._new_id("vol"))
            self._volumes[vol.id] = vol
            self._save_volume(vol)
            self._save_meta()
            self._event("create_volume", vol.id)
            return vol.id

    def destroy_volume(self, volume_id: str) -> None:
        with self._lock:
            vol = self._volumes.get(volume_id)
            if vol is not None and not vol.destroyed:
                vol.destroyed = True
                self._mounts.pop(volume_id, None)
                self._save_volume(vol)
                self._event("destroy_volume", volume_id)

    def create_container(self, image_digest: str, volume_id: str) -> str:
        self._check_fault("create_container")
        with self._lock:
            if volume_id not in self._volumes or self._volumes[volume_id].destroyed:
                raise RuntimeFault(f"volume {volume_id} does not exist")
            c = ContainerRecord(
                id=self._new_id("ctr"), image_digest=image_digest, volume_id=volume_id
            )
            self._containers[c.id] = c
            self._save_container(c)
            self._save_meta()
            self._event("create_container", c.id)
            return c.id

    def mount(self, volume_id: str, filesystem) -> None:
        self._check_fault("mount")
        with self._lock:
            if volume_id not in self._volumes or self._volumes[volume_id].destroyed:
                raise RuntimeFault(f"volume {volume_id} does not exist")
            self._mounts[volume_id] = filesystem
            self._event("mount", volume_id)

    def mounted_fs(self, volume_id: str):
        with self._lock:
            return self._mounts.get(volume_id)

    def start_container(self, container_id: str) -> int:
        self._check_fault("start_container")
        with self._lock:
            c = self._require_container(container_id)
            if c.status == "destroyed":
                raise RuntimeFault(f"container {container_id} is destroyed")
            if c.internal_port is None:
                c.internal_port = self._next_port
                self._next_port += 1
            c.status = "running"
            self._save_container(c)
            self._save_meta()
            self._event("start_container", container_id)
            return c.internal_port

    def stop_container(self, container_id: str) -> None:
        self._check_fault("stop_container")
        with self._lock:
            c = self._require_container(container_id)
            if c.status == "running":
                c.status = "stopped"
                self._save_container(c)
                self._event("stop_container", container_id)

    def destroy_container(self, container_id: str) -> None:
        with self._lock:
            c = self._containers.get(container_id)
            if c is not None and c.status != "destroyed":
                c.status = "destroyed"
                self._save_container(c)
                self._event("destroy_container", container_id)

    def _require_container(self, container_id: str) -> ContainerRecord:
        c = self._containers.get(container_id)
        if c is None:
            raise RuntimeFault(f"container {container_id} does not exist")
        return c

    # -- observability -------------------------------------------------------

    def container(self, container_id: str) -> Optional[ContainerRecord]:
        with self._lock:
            return self._containers.get(container_id)

    def volume_count(self) -> int:
        with self._lock:
            return sum(1 for v in self._volumes.values() if not v.destroyed)

    def container_count(self) -> int:
        with self._lock:
            return sum(1 for c in self._containers.values() if c.status != "destroyed")


class ReverseProxy:
    """Routing table mapping public route paths to container endpoints."""

    def __init__(self):
        self._routes: Dict[str, Tuple[str, int]] = {}
        self._lock = threading.Lock()

    def register(self, route_path: str, host: str, internal_port: int) -> None:
        with self._lock:
            if route_path in self._routes:
                raise RuntimeFault(f"route {route_path} already registered")
            self._routes[route_path] = (host, internal_port)

    def unregister(self, route_path: str) -> None:
        with self._lock:
            self._routes.pop(route_path, None)

    def lookup(self, route_path: str) -> Tuple[str, int]:
        with self._lock:
            endpoint = self._routes.get(route_path)
        if endpoint is None:
            raise NoRoute(f"no route for {route_path}")
        return endpoint

    def routes(self) -> Dict[str, Tuple[str, int]]:
        with self._lock:
            return dict(self._routes)

    def size(self) -> int:
        with self._lock:
            return len(self._routes)
