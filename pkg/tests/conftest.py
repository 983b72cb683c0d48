import threading

import pytest

from talekit.catalog import Catalog
from talekit.dms import DataManager, StorageConfig
from talekit.providers import MockProvider, ProviderRegistry

DS1_FILES = {"a.csv": b"0123456789", "b.csv": b"x" * 20}


class FakeClock:
    """Manually advanced clock so age and decay are deterministic."""

    def __init__(self, start: float = 1_000_000.0):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        with self._lock:
            self._now += seconds
            return self._now


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def mock_provider():
    provider = MockProvider()
    provider.add_dataset("mock:ds1", "ds one", DS1_FILES)
    provider.add_dataset("mock:empty", "empty set", {})
    provider.add_dataset(
        "mock:nested",
        "nested",
        {"top.txt": b"top level", "sub/inner.txt": b"inner bytes"},
        sub=["mock:ds1"],
    )
    return provider


@pytest.fixture
def registry(mock_provider):
    reg = ProviderRegistry(sleeper=lambda _: None)
    reg.register_provider(mock_provider)
    return reg


@pytest.fixture
def catalog():
    return Catalog()


@pytest.fixture
def dms_factory(catalog, registry, tmp_path, clock):
    """Build DataManagers sharing the catalog/registry but custom config."""

    def build(capacity=1 << 20, weights=(1.0, 1.0, 1.0), subdir="cache", **kw):
        return DataManager(
            catalog,
            registry,
            str(tmp_path / subdir),
            StorageConfig(capacity=capacity, eviction_weights=weights),
            clock=clock,
            **kw,
        )

    return build


def register_fixture_tree(engine, token, identifier="mock:ds1"):
    """Register a dataset and return its root folder node."""
    return engine.register_dataset(token, identifier)
