"""talekit: package and re-run computational research as portable tales.

Registers external datasets by reference, lazily caches their bytes behind
a POSIX-like session filesystem, bundles environments with data and
metadata into portable tales, and launches and steers tale instances.
Exposed as a library, a REST service (``talekit.api``), and a CLI (``wt``).
"""

from .auth import AuthManager, Decision, Identity, LocalIdentityProvider, Token
from .catalog import Catalog, FileRef, Node, ProvenanceRecord
from .dms import (
    CacheEntry,
    DataManager,
    FileHandle,
    GcReport,
    Session,
    SessionFilesystem,
    StorageConfig,
)
from .engine import Engine, EngineConfig
from .errors import TaleKitError
from .jobs import JobBoard, JobRecord
from .orchestrator import Instance, InstanceMount, LAUNCH_STEPS, Orchestrator
from .providers import (
    DatasetDescriptor,
    FileEntry,
    HttpsProvider,
    LocalProvider,
    MockProvider,
    Provider,
    ProviderRegistry,
)
from .runtime import ReverseProxy, SimulatedRuntime
from .storage import JournalStore
from .tales import Image, Recipe, Tale, TaleManager, TaleMetadata

__version__ = "0.1.0"

__all__ = [
    "AuthManager",
    "CacheEntry",
    "Catalog",
    "DataManager",
    "DatasetDescriptor",
    "Decision",
    "Engine",
    "EngineConfig",
    "FileEntry",
    "FileHandle",
    "FileRef",
    "GcReport",
    "HttpsProvider",
    "Identity",
    "Image",
    "Instance",
    "InstanceMount",
    "JobBoard",
    "JobRecord",
    "JournalStore",
    "LAUNCH_STEPS",
    "LocalIdentityProvider",
    "LocalProvider",
    "MockProvider",
    "Node",
    "Orchestrator",
    "Provider",
    "ProviderRegistry",
    "ProvenanceRecord",
    "Recipe",
    "ReverseProxy",
    "Session",
    "SessionFilesystem",
    "SimulatedRuntime",
    "StorageConfig",
    "Tale",
    "TaleKitError",
    "TaleManager",
    "TaleMetadata",
    "Token",
]
