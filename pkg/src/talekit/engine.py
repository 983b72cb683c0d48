"""The engine facade: wires all subsystems and enforces authorization.

Everything the REST service, CLI, and dashboard can do goes through an
Engine. Library users may also reach the underlying modules directly
(``engine.catalog``, ``engine.dms``, ...) when tokens are not part of the
picture, e.g. in notebooks and demos.
"""

from __future__ import annotations

import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .auth import AuthManager, LocalIdentityProvider
from .catalog import Catalog, Node, ProvenanceRecord
from .dms import DataManager, Session, StorageConfig
from .errors import (
    AccessDenied,
    CyclicDataset,
    NoSuchPath,
    Unauthorized,
    UnknownNode,
)
from .jobs import IMAGE_BUILD, REGISTER, JobBoard, JobRecord
from .orchestrator import Instance, InstanceMount, Orchestrator
from .providers import HttpsProvider, LocalProvider, MockProvider, ProviderRegistry
from .runtime import ReverseProxy, SimulatedRuntime
from .storage import JournalStore
from .tales import SimulatedImageBuilder, Tale, TaleManager, TaleMetadata

DEFAULT_CAPACITY = 256 * 1024 * 1024


@dataclass
class EngineConfig:
    data_dir: Optional[str] = None  # None -> fully in-memory / temp cache
    cache_capacity: int = DEFAULT_CAPACITY
    eviction_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    gc_period: float = 60.0
    build_delay: float = 0.2
    auth_issuer: str = "local"
    auth_secret: str = "s3cret"
    fixture_path: Optional[str] = None
    runtime_seed: int = 0
    root_collection: str = "data"
    job_workers: int = 2


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None):
        self.config = config or EngineConfig()
        cfg = self.config
        if cfg.data_dir:
            os.makedirs(cfg.data_dir, exist_ok=True)
            self.store: Optional[JournalStore] = JournalStore(
                os.path.join(cfg.data_dir, "journal.wt")
            )
            cache_root = os.path.join(cfg.data_dir, "cache")
        else:
            self.store = None
            cache_root = tempfile.mkdtemp(prefix="talekit-cache-")

        self.catalog = Catalog(self.store)
        self.registry = ProviderRegistry()
        self.mock_provider = MockProvider()
        if cfg.fixture_path:
            self.mock_provider.load_fixtures(cfg.fixture_path)
        self.registry.register_provider(self.mock_provider)
        self.registry.register_provider(LocalProvider())
        self.registry.register_provider(HttpsProvider())

        self.auth = AuthManager(self.store)
        self.auth.register_issuer(
            LocalIdentityProvider(cfg.auth_issuer, secret=cfg.auth_secret)
        )
        self.dms = DataManager(
            self.catalog,
            self.registry,
            cache_root,
            StorageConfig(
                capacity=cfg.cache_capacity,
                eviction_weights=cfg.eviction_weights,
                gc_period=cfg.gc_period,
            ),
            store=self.store,
        )
        self.tales = TaleManager(
            self.catalog,
            self.registry,
            self.store,
            builder=SimulatedImageBuilder(delay=cfg.build_delay),
        )
        self.runtime = SimulatedRuntime(self.store, seed=cfg.runtime_seed)
        self.proxy = ReverseProxy()
        self.orchestrator = Orchestrator(
            self.tales, self.dms, self.runtime, self.proxy, self.auth, self.store
        )
        self.jobs = JobBoard(self.store)
        self._pool = ThreadPoolExecutor(max_workers=cfg.job_workers, thread_name_prefix="job")
        self._root_lock = threading.Lock()
        self._ensure_root()
        self.dms.gc_sweep()  # restore capacity invariant after a restart

    def _ensure_root(self) -> None:
        with self._root_lock:
            for node in self.catalog.list_collections():
                if node.name == self.config.root_collection:
                    self.root_collection = node
                    return
            self.root_collection = self.catalog.create_collection(self.config.root_collection)

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        self.tales.close()
        self.dms.stop_gc()
        if self.store is not None:
            self.store.close()

    # -- authorization ------------------------------------------------------

    def check(self, token: Optional[str], action: str, resource: Optional[str] = None) -> None:
        """Raise unless the token may perform ``action`` (optionally on a resource)."""
        decision = self.auth.authorize(token, resource, action)
        if decision.allowed:
            return
        if decision.reason in ("UnknownToken", "Expired", "Revoked"):
            raise Unauthorized(f"token rejected: {decision.reason}")
        raise AccessDenied(decision.reason)

    def _owner_identity(self, token: Optional[str]) -> Optional[str]:
        ident = self.auth.token_identity(token) if token else None
        return ident.id if ident else None

    # -- registration (identifier -> folder hierarchy, by reference) --------

    def register_dataset(
        self,
        token: Optional[str],
        identifier: str,
        parent_id: Optional[str] = None,
        job_id: Optional[str] = None,
    ) -> Node:
        """Register an external dataset under the catalog, by reference.

        Resolves the identifier, creates a folder for the dataset, an item
        plus file reference for every file, and recurses into referenced
        sub-datasets. No data bytes move.
        """
        self.check(token, "data:write", parent_id)
        parent_id = parent_id or self.root_collection.id
        progress = {"done": 0, "known": 1}
        folder = self._register_tree(identifier, parent_id, (), job_id, progress)
        owner = self._owner_identity(token)
        if owner:
            self.auth.set_owner(folder.id, owner)
        return folder

    def _register_tree(
        self,
        identifier: str,
        parent_id: str,
        seen: tuple,
        job_id: Optional[str],
        progress: dict,
    ) -> Node:
        if identifier in seen:
            raise CyclicDataset(" -> ".join(seen + (identifier,)))
        descriptor = self.registry.resolve(identifier)
        if job_id:
            self.jobs.notify(
                job_id,
                f"resolved {identifier}: {len(descriptor.entries)} files, "
                f"{len(descriptor.sub_datasets)} sub-datasets",
                self._register_progress(progress),
            )
        name = self.catalog.unique_child_name(parent_id, descriptor.name)
        folder = self.catalog.create_folder(parent_id, name)
        dirs: Dict[str, str] = {"": folder.id}
        for entry in descriptor.entries:
            parts = entry.relative_path.split("/")
            for depth in range(1, len(parts)):
                key = "/".join(parts[:depth])
                if key not in dirs:
                    parent = dirs["/".join(parts[: depth - 1])]
                    sub = self.catalog.create_folder(
                        parent, self.catalog.unique_child_name(parent, parts[depth - 1])
                    )
                    dirs[key] = sub.id
            item_parent = dirs["/".join(parts[:-1])]
            item = self.catalog.create_item(
                item_parent, self.catalog.unique_child_name(item_parent, parts[-1])
            )
            self.catalog.attach_file(
                item.id,
                ProvenanceRecord(
                    source_url=entry.source_url,
                    protocol=entry.protocol,
                    provider=descriptor.provider,
                    identifier=descriptor.identifier,
                    original_name=entry.original_name,
                    checksum=entry.checksum,
                ),
                entry.size,
            )
        progress["known"] += len(descriptor.sub_datasets)
        for sub in descriptor.sub_datasets:
            self._register_tree(sub, folder.id, seen + (identifier,), job_id, progress)
        progress["done"] += 1
        if job_id:
            self.jobs.notify(
                job_id,
                f"registered {descriptor.name}",
                self._register_progress(progress),
            )
        return folder

    @staticmethod
    def _register_progress(progress: dict) -> int:
        return min(95, int(95 * progress["done"] / max(1, progress["known"])))

    def register_dataset_job(self, token: Optional[str], identifier: str) -> JobRecord:
        """Asynchronous registration: returns immediately with a job record."""
        self.check(token, "data:write")
        job = self.jobs.create(REGISTER)

        def task():
            self.jobs.start(job.id)
            try:
                folder = self.register_dataset(token, identifier, job_id=job.id)
            except Exception as exc:
                self.jobs.finish(job.id, ok=False, message=f"{type(exc).__name__}: {exc}")
                return
            self.jobs.finish(
                job.id, ok=True, message="registration complete", result={"folder_id": folder.id}
            )

        self._pool.submit(task)
        return job

    # -- catalog --------------------------------------------------------------

    def create_folder(self, token: Optional[str], parent_id: str, name: str) -> Node:
        self.check(token, "data:write", parent_id)
        node = self.catalog.create_folder(parent_id, name)
        owner = self._owner_identity(token)
        if owner:
            self.auth.set_owner(node.id, owner)
        return node

    def move_node(self, token: Optional[str], node_id: str, new_parent: str) -> Node:
        self.check(token, "data:write", node_id)
        return self.catalog.move_node(node_id, new_parent)

    def rename_node(self, token: Optional[str], node_id: str, new_name: str) -> Node:
        self.check(token, "data:write", node_id)
        return self.catalog.rename_node(node_id, new_name)

    def annotate(self, token: Optional[str], node_id: str, key: str, value: str) -> Node:
        self.check(token, "data:write", node_id)
        return self.catalog.annotate(node_id, key, value)

    def get_node(self, token: Optional[str], node_id: str) -> Node:
        self.check(token, "data:read", node_id)
        return self.catalog.get_node(node_id)

    def list_children(self, token: Optional[str], node_id: str) -> List[Node]:
        self.check(token, "data:read", node_id)
        return self.catalog.list_children(node_id)

    def resolve_path(self, token: Optional[str], path: str) -> Node:
        """Resolve a slash path (/collection/folder/...) to a node."""
        self.check(token, "data:read")
        parts = [p for p in path.split("/") if p]
        if not parts:
            return self.root_collection
        node = None
        for root in self.catalog.list_collections():
            if root.name == parts[0]:
                node = root
                break
        if node is None:
            raise NoSuchPath(f"no collection named {parts[0]!r}")
        for part in parts[1:]:
            children = {c.name: c for c in self.catalog.list_children(node.id)}
            if part not in children:
                raise NoSuchPath(f"{path!r} has no component {part!r}")
            node = children[part]
        return node

    # -- sessions ---------------------------------------------------------------

    def create_session(self, token: Optional[str], roots: List[str]) -> Session:
        for root in roots:
            self.check(token, "data:read", root)
            self.catalog.get_node(root)  # UnknownNode before any work
        return self.dms.create_session(roots)

    def session_tree(self, token: Optional[str], session_id: str) -> dict:
        self.check(token, "data:read")
        session = self.dms.get_session(session_id)
        return session.to_dict()

    # -- tales ---------------------------------------------------------------

    def create_recipe(self, token, name, repo_url, commit_id, config=None):
        self.check(token, "tale:write")
        return self.tales.create_recipe(name, repo_url, commit_id, config)

    def build_image_job(self, token: Optional[str], recipe_id: str):
        self.check(token, "tale:write")
        self.tales.get_recipe(recipe_id)
        job = self.jobs.create(IMAGE_BUILD)
        self.jobs.start(job.id)

        def listener(image):
            try:
                if image.status in ("Ready", "Failed"):
                    self.jobs.finish(
                        job.id,
                        ok=image.status == "Ready",
                        message=f"image {image.status.lower()}",
                        result={"image_id": image.id, "digest": image.digest},
                    )
                else:
                    self.jobs.notify(job.id, f"image {image.status.lower()}", 50)
            except Exception:
                pass  # job already terminal; nothing to report

        image = self.tales.build_image(recipe_id, listener)
        return image, self.jobs.get(job.id)

    def create_tale(self, token, image_id, folder_id, metadata: TaleMetadata) -> Tale:
        self.check(token, "tale:write")
        tale = self.tales.create_tale(image_id, folder_id, metadata)
        owner = self._owner_identity(token)
        if owner:
            self.auth.set_owner(tale.id, owner)
        return tale

    def publish_tale(self, token, tale_id: str, status: str = "Published") -> Tale:
        self.check(token, "publish", tale_id)
        return self.tales.set_publication_status(tale_id, status)

    def export_tale(self, token, tale_id: str) -> dict:
        self.check(token, "data:read", tale_id)
        return self.tales.export_tale(tale_id)

    def import_tale(self, token, manifest: dict) -> Tale:
        self.check(token, "tale:write")
        tale = self.tales.import_tale(manifest, self.root_collection.id)
        owner = self._owner_identity(token)
        if owner:
            self.auth.set_owner(tale.id, owner)
        return tale

    # -- instances ----------------------------------------------------------------

    def launch_instance(self, token: Optional[str], tale_id: str) -> Instance:
        return self.orchestrator.launch_instance(tale_id, token)

    def suspend_instance(self, token, instance_id: str) -> Instance:
        self.check(token, "instance:launch", instance_id)
        return self.orchestrator.suspend_instance(instance_id)

    def resume_instance(self, token, instance_id: str) -> Instance:
        self.check(token, "instance:launch", instance_id)
        return self.orchestrator.resume_instance(instance_id)

    def delete_instance(self, token, instance_id: str) -> None:
        self.check(token, "instance:launch", instance_id)
        self.orchestrator.delete_instance(instance_id)

    def get_instance(self, token, instance_id: str) -> Instance:
        self.check(token, "data:read")
        return self.orchestrator.get_instance(instance_id)

    def instance_mount(self, token, instance_id: str) -> InstanceMount:
        self.check(token, "data:read")
        return self.orchestrator.instance_mount(instance_id)

    # -- observability ---------------------------------------------------------

    def cache_stats(self, token: Optional[str]) -> dict:
        self.check(token, "data:read")
        return self.dms.cache_stats()

    def get_job(self, token: Optional[str], job_id: str) -> JobRecord:
        self.check(token, "data:read")
        return self.jobs.get(job_id)
