"""Tale lifecycle: recipes, asynchronously built images, tales, manifests.

A recipe pins an environment definition to a repository URL and commit; the
builder turns recipes into content-addressed images on a small worker pool;
a tale binds one image to one data folder plus descriptive and licensing
metadata. Tales serialize to a self-contained JSON manifest (no engine-local
ids) that can be imported elsewhere: data entries are re-registered by
identifier and provenance is carried over verbatim.
"""

from __future__ import annotations

import hashlib
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional
from urllib.parse import urlparse

from .catalog import FOLDER, ITEM, Catalog, ProvenanceRecord
from .errors import (
    EmptyCommit,
    InvalidUrl,
    SchemaInvalid,
    UnknownFolder,
    UnknownIdentifier,
    UnknownImage,
    UnknownRecipe,
    UnknownTale,
    ValidationFailed,
)
from .providers import ProviderRegistry
from .storage import JournalStore, Table, canonical_json
import json

MANIFEST_VERSION = "1"
MANIFEST_KEY = "wholetale_manifest_version"
LICENSE_COMPONENTS = ("environment", "data", "scripts")

QUEUED = "Queued"
BUILDING = "Building"
READY = "Ready"
FAILED = "Failed"

PRIVATE = "Private"
SHARED = "Shared"
PUBLISHED = "Published"


@dataclass(frozen=True)
class Recipe:
    id: str
    name: str
    repo_url: str
    commit_id: str
    config: Dict[str, str]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "repo_url": self.repo_url,
            "commit_id": self.commit_id,
            "config": dict(self.config),
        }


@dataclass
class Image:
    id: str
    recipe_id: str
    status: str = QUEUED
    digest: Optional[str] = None
    build_log: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "recipe_id": self.recipe_id,
            "status": self.status,
            "digest": self.digest,
            "build_log": self.build_log,
        }


@dataclass
class TaleMetadata:
    title: str = ""
    authors: List[str] = field(default_factory=list)
    description: str = ""
    icon: str = ""
    illustration: str = ""
    category: List[str] = field(default_factory=list)
    publication_status: str = PRIVATE
    licenses: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "authors": list(self.authors),
            "description": self.description,
            "icon": self.icon,
            "illustration": self.illustration,
            "category": list(self.category),
            "publication_status": self.publication_status,
            "licenses": dict(self.licenses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaleMetadata":
        return cls(
            title=d.get("title", ""),
            authors=list(d.get("authors", [])),
            description=d.get("description", ""),
            icon=d.get("icon", ""),
            illustration=d.get("illustration", ""),
            category=list(d.get("category", [])),
            publication_status=d.get("publication_status", PRIVATE),
            licenses=dict(d.get("licenses", {})),
        )

    def validate_publishable(self) -> None:
        if not self.title:
            raise ValidationFailed("published tales need a title")
        if not self.authors:
            raise ValidationFailed("published tales need at least one author")
        missing = [c for c in LICENSE_COMPONENTS if not self.licenses.get(c)]
        if missing:
            raise ValidationFailed(f"missing component licenses: {', '.join(missing)}")


@dataclass
class Tale:
    id: str
    image_id: str
    folder_id: str
    metadata: TaleMetadata
    degraded: bool = False
    flagged: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_id": self.image_id,
            "folder_id": self.folder_id,
            "metadata": self.metadata.to_dict(),
            "degraded": self.degraded,
            "flagged": list(self.flagged),
        }


def image_digest(repo_url: str, commit_id: str, config: Dict[str, str]) -> str:
    payload = "\n".join([repo_url, commit_id, canonical_json(config)])
    return "sha256:" + hashlib.sha256(payload.encode("utf-8")).hexdigest()


class BuildFailure(Exception):
    def __init__(self, log: str):
        super().__init__(log)
        self.log = log


class SimulatedImageBuilder:
    """Deterministic builder: the digest is a pure function of the recipe.

    A config of {"fail": "true"} makes the build fail, for fault fixtures.
    """

    def __init__(self, delay: float = 0.2):
        self.delay = delay

    def build(self, recipe: Recipe) -> str:
        if self.delay:
            time.sleep(self.delay)
        if recipe.config.get("fail") == "true":
            raise BuildFailure(f"simulated build failure for recipe {recipe.name!r}")
        return image_digest(recipe.repo_url, recipe.commit_id, recipe.config)


class TaleManager:
    """Recipes, images, tales, and the build queue."""

    def __init__(
        self,
        catalog: Catalog,
        registry: ProviderRegistry,
        store: Optional[JournalStore] = None,
        builder: Optional[SimulatedImageBuilder] = None,
        build_workers: int = 2,
    ):
        self.catalog = catalog
        self.registry = registry
        self.builder = builder or SimulatedImageBuilder()
        self._lock = threading.RLock()
        self._recipes_tbl = Table(store, "tale.recipes")
        self._images_tbl = Table(store, "tale.images")
        self._tales_tbl = Table(store, "tale.tales")
        self._recipes: Dict[str, Recipe] = {
            k: Recipe(
                id=k,
                name=v["name"],
                repo_url=v["repo_url"],
                commit_id=v["commit_id"],
                config=dict(v["config"]),
            )
            for k, v in self._recipes_tbl.items()
        }
        self._images: Dict[str, Image] = {
            k: Image(
                id=k,
                recipe_id=v["recipe_id"],
                status=v["status"],
                digest=v.get("digest"),
                build_log=v.get("build_log", ""),
            )
            for k, v in self._images_tbl.items()
        }
        self._tales: Dict[str, Tale] = {
            k: Tale(
                id=k,
                image_id=v["image_id"],
                folder_id=v["folder_id"],
                metadata=TaleMetadata.from_dict(v["metadata"]),
                degraded=v.get("degraded", False),
                flagged=list(v.get("flagged", [])),
            )
            for k, v in self._tales_tbl.items()
        }
        self._pool = ThreadPoolExecutor(max_workers=build_workers, thread_name_prefix="build")
        # builds interrupted by a restart are resubmitted (digest is deterministic)
        for image in list(self._images.values()):
            if image.status in (QUEUED, BUILDING):
                image.status = QUEUED
                self._save_image(image)
                self._submit(image)

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    # -- recipes ----------------------------------------------------------

    def create_recipe(
        self, name: str, repo_url: str, commit_id: str, config: Optional[Dict[str, str]] = None
    ) -> Recipe:
        parsed = urlparse(repo_url)
        if not parsed.scheme or not (parsed.netloc or parsed.path):
            raise InvalidUrl(f"not a usable repository URL: {repo_url!r}")
        if not commit_id:
            raise EmptyCommit("commit id must be nonempty")
        config = dict(config or {})
        for key, value in config.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValidationFailed("recipe config must be a flat string map")
        with self._lock:
            for recipe in self._recipes.values():
                if (
                    recipe.repo_url == repo_url
                    and recipe.commit_id == commit_id
                    and recipe.config == config
                ):
                    return recipe
            recipe = Recipe(
                id=uuid.uuid4().hex,
                name=name,
                repo_url=repo_url,
                commit_id=commit_id,
                config=config,
            )
            self._recipes[recipe.id] = recipe
            self._recipes_tbl.put(recipe.id, recipe.to_dict())
            return recipe

    def get_recipe(self, recipe_id: str) -> Recipe:
        recipe = self._recipes.get(recipe_id)
        if recipe is None:
            raise UnknownRecipe(f"no such recipe: {recipe_id}")
        return recipe

    def list_recipes(self) -> List[Recipe]:
        with self._lock:
            return list(self._recipes.values())

    # -- images -----------------------------------------------------------

    def build_image(
        self, recipe_id: str, listener: Optional[Callable[[Image], None]] = None
    ) -> Image:
        with self._lock:
            recipe = self.get_recipe(recipe_id)
            image = Image(id=uuid.uuid4().hex, recipe_id=recipe.id)
            self._images[image.id] = image
            self._save_image(image)
        self._submit(image, listener)
        return image

    def _submit(self, image: Image, listener: Optional[Callable[[Image], None]] = None) -> None:
        def task():
            recipe = self._recipes[image.recipe_id]
            self._set_status(image, BUILDING, listener)
            try:
                digest = self.builder.build(recipe)
            except BuildFailure as exc:
                image.build_log = exc.log
                self._set_status(image, FAILED, listener)
                return
            image.digest = digest
            image.build_log = f"built {digest} from {recipe.repo_url}@{recipe.commit_id}"
            self._set_status(image, READY, listener)

        self._pool.submit(task)

    def _set_status(self, image: Image, status: str, listener) -> None:
        with self._lock:
            image.status = status
            self._save_image(image)
        if listener is not None:
            listener(image)

    def _save_image(self, image: Image) -> None:
        self._images_tbl.put(image.id, image.to_dict())

    def get_image(self, image_id: str) -> Image:
        image = self._images.get(image_id)
        if image is None:
            raise UnknownImage(f"no such image: {image_id}")
        return image

    def list_images(self) -> List[Image]:
        with self._lock:
            return list(self._images.values())

    def wait_image(self, image_id: str, timeout: float = 10.0) -> Image:
        deadline = time.time() + timeout
        while time.time() < deadline:
            image = self.get_image(image_id)
            if image.status in (READY, FAILED):
                return image
            time.sleep(0.01)
        return self.get_image(image_id)

    # -- tales --------------------------------------------------------------

    def create_tale(self, image_id: str, folder_id: str, metadata: TaleMetadata) -> Tale:
        with self._lock:
            if image_id not in self._images:
                raise UnknownImage(f"no such image: {image_id}")
            try:
                folder = self.catalog.get_node(folder_id)
            except Exception:
                raise UnknownFolder(f"no such folder: {folder_id}")
            if folder.kind != FOLDER:
                raise UnknownFolder(f"{folder.name!r} is not a Folder")
            if metadata.publication_status == PUBLISHED:
                metadata.validate_publishable()
            tale = Tale(
                id=uuid.uuid4().hex,
                image_id=image_id,
                folder_id=folder_id,
                metadata=metadata,
            )
            self._tales[tale.id] = tale
            self._tales_tbl.put(tale.id, tale.to_dict())
            return tale

    def get_tale(self, tale_id: str) -> Tale:
        tale = self._tales.get(tale_id)
        if tale is None:
            raise UnknownTale(f"no such tale: {tale_id}")
        return tale

    def list_tales(self) -> List[Tale]:
        with self._lock:
            return list(self._tales.values())

    def set_publication_status(self, tale_id: str, status: str) -> Tale:
        with self._lock:
            tale = self.get_tale(tale_id)
            if status not in (PRIVATE, SHARED, PUBLISHED):
                raise ValidationFailed(f"unknown publication status {status!r}")
            if status == PUBLISHED:
                tale.metadata.validate_publishable()
            tale.metadata.publication_status = status
            self._tales_tbl.put(tale.id, tale.to_dict())
            return tale

    def update_metadata(self, tale_id: str, metadata: TaleMetadata) -> Tale:
        with self._lock:
            tale = self.get_tale(tale_id)
            if metadata.publication_status == PUBLISHED:
                metadata.validate_publishable()
            tale.metadata = metadata
            self._tales_tbl.put(tale.id, tale.to_dict())
            return tale

    # -- manifests ------------------------------------------------------------

    def export_tale(self, tale_id: str) -> dict:
        tale = self.get_tale(tale_id)
        image = self.get_image(tale.image_id)
        recipe = self.get_recipe(image.recipe_id)
        folder = self.catalog.get_node(tale.folder_id)
        data = []
        for path, ref in self._walk_refs(folder.id, folder.name):
            p = ref.provenance
            data.append(
                {
                    "source_url": p.source_url,
                    "protocol": p.protocol,
                    "provider": p.provider,
                    "identifier": p.identifier,
                    "original_name": p.original_name,
                    "checksum": p.checksum,
                    "size": ref.size,
                    "posix_path": path,
                }
            )
        data.sort(key=lambda e: e["posix_path"])
        return {
            MANIFEST_KEY: MANIFEST_VERSION,
            "environment": {
                "name": recipe.name,
                "repo_url": recipe.repo_url,
                "commit_id": recipe.commit_id,
                "config": dict(recipe.config),
            },
            "data": data,
            "metadata": tale.metadata.to_dict(),
        }

    def _walk_refs(self, node_id: str, prefix: str):
        node = self.catalog.get_node(node_id)
        if node.kind == ITEM:
            refs = self.catalog.file_refs(node_id)
            if len(refs) == 1:
                yield prefix, refs[0]
            else:
                for ref in refs:
                    yield f"{prefix}/{ref.provenance.original_name}", ref
            return
        for child in self.catalog.list_children(node_id):
            yield from self._walk_refs(child.id, f"{prefix}/{child.name}")

    @staticmethod
    def canonical_manifest(manifest: dict) -> str:
        """Canonical form: sorted keys, UTF-8, LF; basis of the round-trip fixpoint."""
        return json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    def import_tale(self, manifest: dict, parent_id: str) -> Tale:
        self._validate_manifest(manifest)
        env = manifest["environment"]
        recipe = self.create_recipe(
            env["name"], env["repo_url"], env["commit_id"], dict(env.get("config", {}))
        )
        image = self.build_image(recipe.id)

        entries = sorted(manifest["data"], key=lambda e: e["posix_path"])
        flagged: List[str] = []
        dead_identifiers: Dict[str, bool] = {}
        for entry in entries:
            ident = entry["identifier"]
            if ident not in dead_identifiers:
                try:
                    self.registry.resolve(ident)
                    dead_identifiers[ident] = False
                except UnknownIdentifier:
                    dead_identifiers[ident] = True
            if dead_identifiers[ident]:
                flagged.append(entry["posix_path"])

        root_name = None
        folder_ids: Dict[str, str] = {}
        for entry in entries:
            parts = entry["posix_path"].split("/")
            if root_name is None:
                root_name = self.catalog.unique_child_name(parent_id, parts[0])
                root = self.catalog.create_folder(parent_id, root_name)
                folder_ids[parts[0]] = root.id
            elif parts[0] not in folder_ids:
                raise SchemaInvalid("data entries must share one root folder")
            # intermediate directories
            for depth in range(2, len(parts)):
                key = "/".join(parts[:depth])
                if key not in folder_ids:
                    parent = folder_ids["/".join(parts[: depth - 1])]
                    name = self.catalog.unique_child_name(parent, parts[depth - 1])
                    folder_ids[key] = self.catalog.create_folder(parent, name).id
            parent = folder_ids["/".join(parts[:-1])]
            item_name = self.catalog.unique_child_name(parent, parts[-1])
            item = self.catalog.create_item(parent, item_name)
            self.catalog.attach_file(
                item.id,
                ProvenanceRecord(
                    source_url=entry["source_url"],
                    protocol=entry["protocol"],
                    provider=entry["provider"],
                    identifier=entry["identifier"],
                    original_name=entry.get("original_name", parts[-1]),
                    checksum=entry.get("checksum"),
                ),
                entry["size"],
            )
        if root_name is None:
            # manifest with no data entries still needs a folder for the tale
            root_name = self.catalog.unique_child_name(parent_id, "data")
            root = self.catalog.create_folder(parent_id, root_name)
            folder_ids[""] = root.id
            root_folder_id = root.id
        else:
            root_folder_id = folder_ids[entries[0]["posix_path"].split("/")[0]]

        metadata = TaleMetadata.from_dict(manifest.get("metadata", {}))
        tale = self.create_tale(image.id, root_folder_id, metadata)
        if flagged:
            tale.degraded = True
            tale.flagged = flagged
            self._tales_tbl.put(tale.id, tale.to_dict())
        return tale

    @staticmethod
    def _validate_manifest(manifest: dict) -> None:
        if not isinstance(manifest, dict):
            raise SchemaInvalid("manifest must be a JSON object")
        version = manifest.get(MANIFEST_KEY)
        if version != MANIFEST_VERSION:
            raise SchemaInvalid(f"unsupported manifest version {version!r}")
        env = manifest.get("environment")
        if not isinstance(env, dict) or not all(
            k in env for k in ("name", "repo_url", "commit_id")
        ):
            raise SchemaInvalid("manifest environment must carry name, repo_url, commit_id")
        data = manifest.get("data")
        if not isinstance(data, list):
            raise SchemaInvalid("manifest data must be a list")
        for entry in data:
            missing = [
                k
                for k in ("source_url", "protocol", "provider", "identifier", "size", "posix_path")
                if k not in entry
            ]
            if missing:
                raise SchemaInvalid(f"data entry missing fields: {', '.join(missing)}")
            if entry["posix_path"].startswith("/") or not entry["posix_path"]:
                raise SchemaInvalid("posix_path must be relative to the data root")
        if not isinstance(manifest.get("metadata", {}), dict):
            raise SchemaInvalid("manifest metadata must be an object")
