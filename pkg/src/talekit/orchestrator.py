"""Instance lifecycle: the seven-step launch protocol plus steering.

Launching a tale walks a fixed sequence — validate the request, create a
volume, create a container from the image and volume, mount the session
filesystem at the volume mountpoint, start the container and register its
port with the reverse proxy, return connection info, record the instance —
and every step lands in an ordered audit log. A failed step rolls back all
earlier ones (volume destroyed, route removed, session released) and leaves
the instance in Error with the partial audit. Running instances can be
suspended (container stopped, route dropped, data locks released), resumed,
and deleted.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .auth import AuthManager
from .dms import DataManager, FileHandle, SessionFilesystem
from .errors import (
    ImageNotReady,
    InvalidState,
    StepFailed,
    Unauthorized,
    UnknownInstance,
)
from .runtime import ReverseProxy, SimulatedRuntime
from .storage import JournalStore, Table
from .tales import READY, TaleManager

LAUNCH_STEPS = (
    "request_validated",
    "volume_created",
    "container_created",
    "session_mounted",
    "container_started_route_registered",
    "connection_info_returned",
    "instance_recorded",
)

LAUNCHING = "Launching"
RUNNING = "Running"
SUSPENDED = "Suspended"
DELETED = "Deleted"
ERROR = "Error"


@dataclass
class LaunchStep:
    index: int
    name: str
    outcome: str  # "ok" | "failed"
    detail: str = ""
    ts: float = 0.0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "name": self.name,
            "outcome": self.outcome,
            "detail": self.detail,
            "ts": self.ts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaunchStep":
        return cls(
            index=d["index"],
            name=d["name"],
            outcome=d["outcome"],
            detail=d.get("detail", ""),
            ts=d.get("ts", 0.0),
        )


@dataclass
class Instance:
    id: str
    tale_id: str
    state: str = LAUNCHING
    container_id: Optional[str] = None
    volume_id: Optional[str] = None
    session_id: Optional[str] = None
    route_path: str = ""
    host: str = ""
    internal_port: Optional[int] = None
    audit: List[LaunchStep] = field(default_factory=list)
    connection: Dict[str, object] = field(default_factory=dict)
    created: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tale_id": self.tale_id,
            "state": self.state,
            "container_id": self.container_id,
            "volume_id": self.volume_id,
            "session_id": self.session_id,
            "route_path": self.route_path,
            "host": self.host,
            "internal_port": self.internal_port,
            "audit": [s.to_dict() for s in self.audit],
            "connection": dict(self.connection),
            "created": self.created,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        return cls(
            id=d["id"],
            tale_id=d["tale_id"],
            state=d["state"],
            container_id=d.get("container_id"),
            volume_id=d.get("volume_id"),
            session_id=d.get("session_id"),
            route_path=d.get("route_path", ""),
            host=d.get("host", ""),
            internal_port=d.get("internal_port"),
            audit=[LaunchStep.from_dict(s) for s in d.get("audit", [])],
            connection=dict(d.get("connection", {})),
            created=d.get("created", 0.0),
        )


class InstanceMount:
    """The running tale's view of its data, with handle accounting.

    Every handle opened through the mount is tracked so suspend and delete
    can release all data locks the instance holds.
    """

    def __init__(self, fs: SessionFilesystem):
        self.fs = fs
        self._lock = threading.Lock()
        self._handles: Dict[str, FileHandle] = {}

    def open(self, path: str) -> FileHandle:
        handle = self.fs.open(path)
        with self._lock:
            self._handles[handle.id] = handle
        return handle

    def read(self, handle: FileHandle, offset: int = 0, length: Optional[int] = None) -> bytes:
        return self.fs.read(handle, offset, length)

    def close(self, handle: FileHandle) -> None:
        self.fs.close(handle)
        with self._lock:
            self._handles.pop(handle.id, None)

    def read_file(self, path: str) -> bytes:
        handle = self.open(path)
        try:
            return self.read(handle)
        finally:
            self.close(handle)

    def stat(self, path: str):
        return self.fs.stat(path)

    def listdir(self, path: str):
        return self.fs.listdir(path)

    def close_all(self) -> None:
        with self._lock:
            handles = list(self._handles.values())
            self._handles.clear()
        for handle in handles:
            if not handle.closed:
                self.fs.close(handle)

    def open_count(self) -> int:
        with self._lock:
            return len(self._handles)


class Orchestrator:
    def __init__(
        self,
        tales: TaleManager,
        dms: DataManager,
        runtime: SimulatedRuntime,
        proxy: ReverseProxy,
        auth: AuthManager,
        store: Optional[JournalStore] = None,
    ):
        self.tales = tales
        self.dms = dms
        self.runtime = runtime
        self.proxy = proxy
        self.auth = auth
        self._lock = threading.RLock()
        # image certification hooks: run against the image before any launch
        # side effect; none installed by default
        self.image_policy_hooks: List = []
        self._tbl = Table(store, "orch.instances")
        self._instances: Dict[str, Instance] = {
            k: Instance.from_dict(v) for k, v in self._tbl.items()
        }
        self._mounts: Dict[str, InstanceMount] = {}
        # after a restart: rebuild mounts from persisted sessions and
        # re-register routes for instances that were Running
        for inst in self._instances.values():
            if inst.state in (RUNNING, SUSPENDED) and inst.session_id:
                try:
                    session = self.dms.get_session(inst.session_id)
                except Exception:
                    continue
                mount = InstanceMount(SessionFilesystem(self.dms, session))
                self._mounts[inst.id] = mount
                if inst.volume_id:
                    self.runtime._mounts[inst.volume_id] = mount.fs
                if inst.state == RUNNING and inst.internal_port is not None:
                    self.proxy.register(inst.route_path, inst.host, inst.internal_port)

    def _save(self, inst: Instance) -> None:
        self._tbl.put(inst.id, inst.to_dict())

    # -- launch -----------------------------------------------------------

    def launch_instance(self, tale_id: str, token: Optional[str]) -> Instance:
        decision = self.auth.authorize(token, None, "instance:launch")
        if not decision:
            raise Unauthorized(f"launch denied: {decision.reason}")
        tale = self.tales.get_tale(tale_id)
        image = self.tales.get_image(tale.image_id)
        if image.status != READY:
            raise ImageNotReady(f"image {image.id} is {image.status}")
        for hook in self.image_policy_hooks:
            hook(image)

        inst = Instance(id=uuid.uuid4().hex, tale_id=tale_id, created=time.time())
        inst.route_path = f"/instance/{inst.id}"
        inst.host = self.runtime.host
        mount: Optional[InstanceMount] = None
        route_registered = False

        def record(index: int, detail: str = "") -> None:
            inst.audit.append(
                LaunchStep(
                    index=index,
                    name=LAUNCH_STEPS[index - 1],
                    outcome="ok",
                    detail=detail,
                    ts=time.time(),
                )
            )

        step = 1
        try:
            record(1, f"tale {tale_id}, image {image.digest}")

            step = 2
            inst.volume_id = self.runtime.create_volume()
            record(2, inst.volume_id)

            step = 3
            inst.container_id = self.runtime.create_container(image.digest, inst.volume_id)
            record(3, inst.container_id)

            step = 4
            session = self.dms.create_session([tale.folder_id])
            inst.session_id = session.id
            mount = InstanceMount(SessionFilesystem(self.dms, session))
            self.runtime.mount(inst.volume_id, mount.fs)
            record(4, f"session {session.id}")

            step = 5
            inst.internal_port = self.runtime.start_container(inst.container_id)
            self.proxy.register(inst.route_path, inst.host, inst.internal_port)
            route_registered = True
            record(5, f"{inst.host}:{inst.internal_port} at {inst.route_path}")

            step = 6
            inst.connection = {
                "route_path": inst.route_path,
                "container_id": inst.container_id,
                "host": inst.host,
                "internal_port": inst.internal_port,
            }
            record(6, inst.route_path)

            step = 7
            inst.state = RUNNING
            with self._lock:
                self._instances[inst.id] = inst
                self._mounts[inst.id] = mount
            record(7, inst.id)
            self._save(inst)
            return inst
        except Exception as exc:
            inst.audit.append(
                LaunchStep(
                    index=step,
                    name=LAUNCH_STEPS[step - 1],
                    outcome="failed",
                    detail=str(exc),
                    ts=time.time(),
                )
            )
            self._rollback(inst, mount, route_registered)
            inst.state = ERROR
            with self._lock:
                self._instances[inst.id] = inst
            self._save(inst)
            raise StepFailed(step, str(exc)) from exc

    def _rollback(self, inst: Instance, mount: Optional[InstanceMount], route_registered: bool) -> None:
        if route_registered:
            self.proxy.unregister(inst.route_path)
        if inst.container_id is not None:
            self.runtime.destroy_container(inst.container_id)
            inst.container_id = None
        if mount is not None:
            mount.close_all()
        if inst.session_id is not None:
            self.dms.drop_session(inst.session_id)
            inst.session_id = None
        if inst.volume_id is not None:
            self.runtime.destroy_volume(inst.volume_id)
            inst.volume_id = None

    # -- steering -----------------------------------------------------------

    def _require(self, instance_id: str) -> Instance:
        inst = self._instances.get(instance_id)
        if inst is None or inst.state == DELETED:
            raise UnknownInstance(f"no such instance: {instance_id}")
        return inst

    def get_instance(self, instance_id: str) -> Instance:
        with self._lock:
            return self._require(instance_id)

    def list_instances(self) -> List[Instance]:
        with self._lock:
            return [i for i in self._instances.values() if i.state != DELETED]

    def suspend_instance(self, instance_id: str) -> Instance:
        with self._lock:
            inst = self._require(instance_id)
            if inst.state != RUNNING:
                raise InvalidState(f"cannot suspend a {inst.state} instance")
            self.runtime.stop_container(inst.container_id)
            self.proxy.unregister(inst.route_path)
            mount = self._mounts.get(inst.id)
            if mount is not None:
                mount.close_all()
            inst.state = SUSPENDED
            self._save(inst)
            return inst

    def resume_instance(self, instance_id: str) -> Instance:
        with self._lock:
            inst = self._require(instance_id)
            if inst.state != SUSPENDED:
                raise InvalidState(f"cannot resume a {inst.state} instance")
            inst.internal_port = self.runtime.start_container(inst.container_id)
            self.proxy.register(inst.route_path, inst.host, inst.internal_port)
            inst.state = RUNNING
            self._save(inst)
            return inst

    def delete_instance(self, instance_id: str) -> None:
        with self._lock:
            inst = self._require(instance_id)
            if inst.state == RUNNING:
                self.runtime.stop_container(inst.container_id)
                self.proxy.unregister(inst.route_path)
            mount = self._mounts.pop(inst.id, None)
            if mount is not None:
                mount.close_all()
            if inst.session_id is not None:
                self.dms.drop_session(inst.session_id)
            if inst.container_id is not None:
                self.runtime.destroy_container(inst.container_id)
            if inst.volume_id is not None:
                self.runtime.destroy_volume(inst.volume_id)
            inst.state = DELETED
            self._save(inst)

    def route_lookup(self, route_path: str):
        return self.proxy.lookup(route_path)

    def instance_mount(self, instance_id: str) -> InstanceMount:
        """Data view of a Running instance (what the container sees)."""
        with self._lock:
            inst = self._require(instance_id)
            if inst.state != RUNNING:
                raise InvalidState(f"instance {instance_id} is {inst.state}, not Running")
            mount = self._mounts.get(instance_id)
        if mount is None:
            raise UnknownInstance(f"instance {instance_id} has no mount")
        return mount
