"""Acceptance suite: one test per shipping criterion, tolerances pinned.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass line per
criterion. Every expected value is computed by an oracle that is independent
of the code path it checks (descriptor walks, provider counters, sorted
last-access lists, multiset equality).
"""

import json
import random
import threading
import time

import pytest
from fastapi.testclient import TestClient

from talekit import Engine, EngineConfig
from talekit.api import create_app
from talekit.auth import AuthManager, LocalIdentityProvider
from talekit.catalog import Catalog, ProvenanceRecord
from talekit.dms import DataManager, StorageConfig
from talekit.errors import EvictionImpossible, ScopeEscalation
from talekit.orchestrator import LAUNCH_STEPS
from talekit.providers import MockProvider, ProviderRegistry
from talekit.tales import TaleMetadata

from conftest import FakeClock

SECRET = "s3cret"


def report(name: str, detail: str = "") -> None:
    print(f"[PASS] {name}" + (f": {detail}" if detail else ""))


def fresh_engine(tmp_path, name="state", **overrides) -> Engine:
    cfg = EngineConfig(data_dir=str(tmp_path / name), build_delay=0.0, **overrides)
    return Engine(cfg)


def login(engine) -> str:
    return engine.auth.authenticate("local", "alice", SECRET).value


# ---------------------------------------------------------------------------
# Criterion 1: recursive registration, isomorphic hierarchy, < 1 s / 1000 items
# ---------------------------------------------------------------------------

def build_depth3_fixture(provider: MockProvider, rng: random.Random) -> dict:
    """Mock tree: root -> 2 subs -> 1 sub-sub each; 1000 items total."""

    def files(n, tag):
        return {f"{tag}_{i:04d}.bin": bytes([i % 251]) * rng.randint(1, 64) for i in range(n)}

    provider.add_dataset("mock:leaf-a", "leaf a", files(100, "la"), sub=[])
    provider.add_dataset("mock:leaf-b", "leaf b", files(100, "lb"), sub=[])
    provider.add_dataset("mock:mid-a", "mid a", files(200, "ma"), sub=["mock:leaf-a"])
    provider.add_dataset("mock:mid-b", "mid b", files(200, "mb"), sub=["mock:leaf-b"])
    provider.add_dataset(
        "mock:deep-root", "deep root", files(400, "rt"), sub=["mock:mid-a", "mock:mid-b"]
    )
    return {"total_items": 1000}


def descriptor_tree(registry, identifier):
    """Oracle: the shape the catalog must mirror, walked from resolve() only."""
    desc = registry.resolve(identifier)
    files = sorted(e.relative_path for e in desc.entries)
    subs = [descriptor_tree(registry, sub) for sub in desc.sub_datasets]
    return {"name": desc.name, "files": files, "subs": sorted(subs, key=lambda s: s["name"])}


def catalog_tree(catalog, folder_id, expected_name):
    node = catalog.get_node(folder_id)
    files, subs = [], []
    for child in catalog.list_children(folder_id):
        if child.kind == "Item":
            files.append(child.name)
        else:
            subs.append(catalog_tree(catalog, child.id, child.name))
    return {"name": expected_name, "files": sorted(files), "subs": sorted(subs, key=lambda s: s["name"])}


def test_recursive_registration_isomorphic_and_fast(tmp_path):
    engine = fresh_engine(tmp_path)
    try:
        build_depth3_fixture(engine.mock_provider, random.Random(0))
        token = login(engine)

        start = time.perf_counter()
        folder = engine.register_dataset(token, "mock:deep-root")
        elapsed = time.perf_counter() - start

        expected = descriptor_tree(engine.registry, "mock:deep-root")
        actual = catalog_tree(engine.catalog, folder.id, expected["name"])
        assert actual == expected, "catalog hierarchy is not isomorphic to the descriptor tree"

        items = sum(1 for n in engine.catalog.walk(folder.id) if n.kind == "Item")
        assert items == 1000
        assert elapsed < 1.0, f"registration of 1000 items took {elapsed:.3f}s (limit 1s)"
        report(
            "recursive registration",
            f"depth-3 tree, {items} items isomorphic, {elapsed * 1000:.0f} ms < 1000 ms",
        )
    finally:
        engine.close()


# ---------------------------------------------------------------------------
# Criterion 2: shallow-copy guarantee (provider byte counters as the oracle)
# ---------------------------------------------------------------------------

def test_shallow_copy_guarantee(tmp_path):
    engine = fresh_engine(tmp_path)
    try:
        payload = b"q" * 4321
        engine.mock_provider.add_dataset("mock:shallow", "shallow", {"data.bin": payload})
        token = login(engine)

        folder = engine.register_dataset(token, "mock:shallow")
        session = engine.create_session(token, [folder.id])
        assert engine.registry.total_bytes_transferred() == 0, "registration must move 0 bytes"

        handle = engine.dms.open_file(session, "/shallow/data.bin")
        first = engine.registry.total_bytes_transferred()
        assert first == len(payload) == 4321, "first open must transfer exactly N bytes"
        engine.dms.read(handle)
        engine.dms.close(handle)

        handle2 = engine.dms.open_file(session, "/shallow/data.bin")
        assert engine.dms.read(handle2) == payload
        engine.dms.close(handle2)
        assert engine.registry.total_bytes_transferred() == first, "second open must transfer 0"
        report("shallow-copy guarantee", "0 bytes on register+session, N on first open, 0 after")
    finally:
        engine.close()


# ---------------------------------------------------------------------------
# Criterion 3: provenance immutability over 1000 ops x 100 seeds
# ---------------------------------------------------------------------------

def build_catalog_for_mutation(rng: random.Random):
    catalog = Catalog()
    root = catalog.create_collection("data")
    folders = [root.id]
    for i in range(12):
        parent = rng.choice(folders)
        kind = catalog.get_node(parent).kind
        node = catalog.create_folder(parent, f"f{i}")
        folders.append(node.id)
    items = []
    for i in range(40):
        parent = rng.choice(folders[1:])
        item = catalog.create_item(parent, f"i{i}")
        catalog.attach_file(
            item.id,
            ProvenanceRecord(
                source_url=f"mock://m/{i}",
                protocol="mock",
                provider="mock",
                identifier="mock:m",
                original_name=f"i{i}",
                checksum=f"sha256:{i:064x}",
            ),
            i,
        )
        items.append(item.id)
    return catalog, folders, items


def test_provenance_immutability_100_seeds():
    from talekit.errors import CycleDetected, DuplicateName, KindMismatch

    for seed in range(100):
        rng = random.Random(seed)
        catalog, folders, items = build_catalog_for_mutation(rng)
        before = catalog.provenance_multiset()
        for _ in range(1000):
            node_id = rng.choice(folders[1:] + items)
            try:
                if rng.random() < 0.5:
                    catalog.move_node(node_id, rng.choice(folders))
                else:
                    catalog.rename_node(node_id, f"n{rng.randrange(64)}")
            except (CycleDetected, DuplicateName, KindMismatch):
                continue
        assert catalog.provenance_multiset() == before, f"provenance drifted at seed {seed}"
    report("provenance immutability", "100 seeds x 1000 move/rename ops, multiset identical")


# ---------------------------------------------------------------------------
# Criterion 4: eviction correctness over randomized workloads, 100 seeds
# ---------------------------------------------------------------------------

CAPACITY = 1 << 20  # 1 MiB
KIB = 1024


def eviction_rig(tmp_path, seed, weights=(1.0, 1.0, 1.0)):
    rng = random.Random(seed)
    clock = FakeClock()
    provider = MockProvider()
    n_files = rng.randint(10, 24)
    files = {
        f"w{i}.bin": rng.randbytes(rng.randint(1 * KIB, 128 * KIB)) for i in range(n_files)
    }
    provider.add_dataset("mock:w", "w", files)
    registry = ProviderRegistry(sleeper=lambda _: None)
    registry.register_provider(provider)
    catalog = Catalog()
    root = catalog.create_collection("data")
    folder = catalog.create_folder(root.id, "w")
    desc = registry.resolve("mock:w")
    for entry in desc.entries:
        item = catalog.create_item(folder.id, entry.relative_path)
        catalog.attach_file(
            item.id,
            ProvenanceRecord(
                source_url=entry.source_url,
                protocol=entry.protocol,
                provider=desc.provider,
                identifier=desc.identifier,
                original_name=entry.original_name,
                checksum=entry.checksum,
            ),
            entry.size,
        )
    dms = DataManager(
        catalog,
        registry,
        str(tmp_path / f"accept-ev-{seed}"),
        StorageConfig(capacity=CAPACITY, eviction_weights=weights),
        clock=clock,
    )
    session = dms.create_session([folder.id])
    return rng, clock, dms, session


def test_eviction_correctness_100_seeds(tmp_path):
    locked_violations = 0
    capacity_violations = 0
    for seed in range(100):
        rng, clock, dms, session = eviction_rig(tmp_path, seed)
        held = {}
        for _ in range(40):
            clock.advance(rng.uniform(0.5, 30))
            path = rng.choice(sorted(session.files))
            roll = rng.random()
            try:
                if roll < 0.45 and path not in held:
                    held[path] = dms.open_file(session, path)
                elif roll < 0.65 and held:
                    dms.close(held.pop(rng.choice(sorted(held))))
                elif roll < 0.85:
                    handle = dms.open_file(session, path)
                    dms.close(handle)
                else:
                    dms.gc_sweep()
            except EvictionImpossible:
                pass
            for handle in held.values():
                entry = dms.entry(handle.key)
                if entry is None or entry.state != "Present":
                    locked_violations += 1
        dms.gc_sweep()
        present = [e for e in dms.entries() if e.state == "Present"]
        used = sum(e.size for e in present)
        unlocked = sum(e.size for e in present if e.lock_count == 0)
        if used > CAPACITY and unlocked > 0:
            capacity_violations += 1
        for handle in held.values():
            dms.close(handle)

    assert locked_violations == 0, f"{locked_violations} locked entries were evicted"
    assert capacity_violations == 0, f"{capacity_violations} post-gc capacity violations"

    # LRU degeneracy: weights (0,0,1), distinct access times
    lru_mismatches = 0
    for seed in range(100):
        rng, clock, dms, session = eviction_rig(tmp_path, 1000 + seed, weights=(0.0, 0.0, 1.0))
        paths = sorted(session.files)
        rng.shuffle(paths)
        opened = []
        for path in paths:
            try:
                handle = dms.open_file(session, path)
                dms.close(handle)
                opened.append(path)
            except EvictionImpossible:
                continue
            clock.advance(rng.uniform(1, 60))  # distinct access times
        oracle = [e.key for e in sorted(dms.entries(), key=lambda e: e.last_access)]
        evicted = dms.evict(CAPACITY)  # flush everything evictable
        if evicted != oracle:
            lru_mismatches += 1
    assert lru_mismatches == 0, f"{lru_mismatches} seeds disagreed with the LRU oracle"
    report(
        "eviction correctness",
        "100 seeds capacity/lock clean + 100 seeds exact LRU order at weights (0,0,1)",
    )


# ---------------------------------------------------------------------------
# Criterion 5: 100 concurrent launches, exact audits, resource neutrality
# ---------------------------------------------------------------------------

def test_launch_protocol_100_concurrent(tmp_path):
    engine = fresh_engine(tmp_path, name="launch")
    try:
        engine.mock_provider.add_dataset("mock:ds1", "ds one", {"a.csv": b"0123456789"})
        token = login(engine)
        folder = engine.register_dataset(token, "mock:ds1")
        recipe = engine.create_recipe(token, "env", "https://git.example/env", "abc")
        image, job = engine.build_image_job(token, recipe.id)
        image = engine.tales.wait_image(image.id)
        tales = [
            engine.create_tale(token, image.id, folder.id, TaleMetadata(title=f"T{i}"))
            for i in range(10)
        ]

        baseline = (
            engine.runtime.volume_count(),
            engine.runtime.container_count(),
            engine.proxy.size(),
            engine.dms.total_locks(),
        )
        results = [None] * 100
        errors = []

        def launch(i):
            try:
                results[i] = engine.launch_instance(token, tales[i % 10].id)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=launch, args=(i,)) for i in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors, errors[:3]

        for inst in results:
            assert inst.state == "Running"
            assert [s.name for s in inst.audit] == list(LAUNCH_STEPS), "audit must match the 7-step sequence exactly"
            assert [s.outcome for s in inst.audit] == ["ok"] * 7
        routes = {inst.route_path for inst in results}
        assert len(routes) == 100, "route paths must be distinct under contention"

        # touch some data through a few mounts, then tear everything down
        for inst in results[:5]:
            engine.orchestrator.instance_mount(inst.id).read_file("/ds one/a.csv")
        for inst in results:
            engine.delete_instance(token, inst.id)
        after = (
            engine.runtime.volume_count(),
            engine.runtime.container_count(),
            engine.proxy.size(),
            engine.dms.total_locks(),
        )
        assert after == baseline, f"resources leaked: {baseline} -> {after}"
        report(
            "launch protocol",
            "100 concurrent launches, exact 7-step audits, 100 routes, neutral teardown",
        )
    finally:
        engine.close()


# ---------------------------------------------------------------------------
# Criterion 6: tale round-trip across engines
# ---------------------------------------------------------------------------

def session_file_list(engine, instance_id):
    inst = engine.orchestrator.get_instance(instance_id)
    session = engine.dms.get_session(inst.session_id)
    return sorted(
        (path, rec.size, rec.provenance.checksum) for path, rec in session.files.items()
    )


def seed_round_trip_fixture(provider):
    provider.add_dataset(
        "mock:rt",
        "roundtrip",
        {"a.csv": b"0123456789", "nested/b.csv": b"y" * 20, "nested/deep/c.bin": b"z" * 7},
    )


def test_tale_round_trip(tmp_path):
    source = fresh_engine(tmp_path, name="rt-source")
    target = fresh_engine(tmp_path, name="rt-target")
    try:
        seed_round_trip_fixture(source.mock_provider)
        seed_round_trip_fixture(target.mock_provider)
        token_a = login(source)
        folder = source.register_dataset(token_a, "mock:rt")
        recipe = source.create_recipe(token_a, "env", "https://git.example/env", "abc")
        image, _ = source.build_image_job(token_a, recipe.id)
        image = source.tales.wait_image(image.id)
        tale = source.create_tale(
            token_a, image.id, folder.id, TaleMetadata(title="RT", authors=["A"])
        )
        manifest = source.export_tale(token_a, tale.id)
        original = source.launch_instance(token_a, tale.id)
        original_list = session_file_list(source, original.id)

        token_b = login(target)
        imported = target.import_tale(token_b, manifest)
        assert not imported.degraded
        imported_image = target.tales.wait_image(imported.image_id)
        assert imported_image.digest == image.digest, "image digest must survive the round-trip"
        relaunched = target.launch_instance(token_b, imported.id)
        imported_list = session_file_list(target, relaunched.id)
        assert imported_list == original_list, "session file lists must be identical"

        re_manifest = target.export_tale(token_b, imported.id)
        fix_a = source.tales.canonical_manifest(manifest)
        fix_b = target.tales.canonical_manifest(re_manifest)
        assert fix_a == fix_b, "canonical manifest fixpoint must hold"
        report(
            "tale round-trip",
            f"{len(original_list)} files equal (path,size,checksum), digests equal, fixpoint holds",
        )
    finally:
        source.close()
        target.close()


# ---------------------------------------------------------------------------
# Criterion 7: 10,000 delegation chains + linked-identity authorization
# ---------------------------------------------------------------------------

def test_auth_properties_10000_chains():
    auth = AuthManager()
    auth.register_issuer(LocalIdentityProvider("local", secret=SECRET))
    auth.register_issuer(LocalIdentityProvider("orcid", secret="orc"))
    rng = random.Random(2024)
    monotonicity_violations = 0
    revocation_violations = 0
    escalation_accepted = 0

    for n in range(10_000):
        root = auth.authenticate("local", f"u{n % 50}", SECRET)
        chain = [root]
        for depth in range(rng.randint(1, 4)):
            parent_scopes = sorted(chain[-1].scopes)
            scopes = set(rng.sample(parent_scopes, rng.randint(1, len(parent_scopes))))
            child = auth.delegate(chain[-1].value, f"svc{depth}", scopes)
            chain.append(child)
        for parent, child in zip(chain, chain[1:]):
            if not child.scopes <= parent.scopes or child.expiry > parent.expiry:
                monotonicity_violations += 1
        # an escalation attempt must never be accepted
        try:
            auth.delegate(chain[-1].value, "svc-x", set(chain[-1].scopes) | {"bogus:scope"})
            escalation_accepted += 1
        except ScopeEscalation:
            pass
        cut = rng.randrange(len(chain))
        auth.revoke(chain[cut].value)
        for t in chain[cut:]:
            if auth.authorize(t.value, None, "data:read").allowed:
                revocation_violations += 1

    assert monotonicity_violations == 0
    assert revocation_violations == 0
    assert escalation_accepted == 0

    # linked identities: either identity of the set may authorize
    owner = auth.authenticate("orcid", "alice", "orc")
    auth.set_owner("res-1", owner.identity)
    auth.link_identities(("local", "alice", SECRET), ("orcid", "alice", "orc"))
    via_local = auth.authenticate("local", "alice", SECRET)
    via_orcid = auth.authenticate("orcid", "alice", "orc")
    assert auth.authorize(via_local.value, "res-1", "data:write").allowed
    assert auth.authorize(via_orcid.value, "res-1", "data:write").allowed
    stranger = auth.authenticate("local", "mallory", SECRET)
    assert not auth.authorize(stranger.value, "res-1", "data:write").allowed
    report(
        "auth properties",
        "10,000 chains: monotone scopes, transitive revocation, linked-identity access",
    )


# ---------------------------------------------------------------------------
# Criterion 8: API contract (scope-stripped fuzzing + restart preservation)
# ---------------------------------------------------------------------------

CREDENTIAL_ENDPOINTS = {"/auth/token", "/auth/link"}  # authenticated by proofs, not scopes


def test_api_contract(tmp_path):
    data_dir = str(tmp_path / "api-state")
    engine = Engine(EngineConfig(data_dir=data_dir, build_delay=0.0))
    engine.mock_provider.add_dataset("mock:ds1", "ds one", {"a.csv": b"0123456789"})
    client = TestClient(create_app(engine))
    token = client.post(
        "/auth/token", json={"issuer": "local", "subject": "alice", "proof": SECRET}
    ).json()["token"]
    headers = {"Authorization": f"Bearer {token}"}

    job = client.post(
        "/dataset/register", json={"identifier": "mock:ds1"}, headers=headers
    ).json()["job"]
    deadline = time.time() + 10
    while time.time() < deadline:
        job = client.get(f"/job/{job['id']}", headers=headers).json()["job"]
        if job["status"] in ("Done", "Failed"):
            break
        time.sleep(0.02)
    folder_id = job["result"]["folder_id"]
    recipe = client.post(
        "/recipe",
        json={"name": "env", "repo_url": "https://git.example/env", "commit_id": "abc"},
        headers=headers,
    ).json()["recipe"]

    stripped = client.post(
        "/auth/token",
        json={"issuer": "local", "subject": "weak", "proof": SECRET, "scopes": []},
    ).json()["token"]
    bodies = {
        "/dataset/register": {"identifier": "mock:ds1"},
        "/folder": {"parent": folder_id, "name": "fz"},
        "/session": {"roots": [folder_id]},
        "/recipe": {"name": "r", "repo_url": "https://x/y", "commit_id": "c"},
        "/image": {"recipe_id": recipe["id"]},
        "/tale": {"image_id": "any", "folder_id": folder_id, "metadata": {}},
        "/instance": {"tale_id": "any"},
    }
    attempts = 0
    for route in client.app.routes:
        for method in (getattr(route, "methods", None) or set()) - {"GET", "HEAD", "OPTIONS"}:
            if route.path in CREDENTIAL_ENDPOINTS:
                continue
            concrete = route.path
            for param in ("node_id", "tale_id", "instance_id", "image_id", "job_id", "session_id"):
                concrete = concrete.replace("{" + param + "}", "fuzz")
            for hdrs in ({}, {"Authorization": f"Bearer {stripped}"}):
                resp = client.request(method, concrete, json=bodies.get(route.path, {}), headers=hdrs)
                attempts += 1
                assert resp.status_code >= 400, (
                    f"scope-stripped {method} {route.path} answered {resp.status_code}"
                )
    assert attempts >= 20

    # restart: every resource survives, same bearer token keeps working
    image_doc = client.post("/image", json={"recipe_id": recipe["id"]}, headers=headers).json()
    deadline = time.time() + 10
    while time.time() < deadline:
        image = client.get(f"/image/{image_doc['image']['id']}", headers=headers).json()["image"]
        if image["status"] in ("Ready", "Failed"):
            break
        time.sleep(0.02)
    tale = client.post(
        "/tale",
        json={"image_id": image["id"], "folder_id": folder_id, "metadata": {"title": "T"}},
        headers=headers,
    ).json()["tale"]
    engine.close()

    engine2 = Engine(EngineConfig(data_dir=data_dir, build_delay=0.0))
    engine2.mock_provider.add_dataset("mock:ds1", "ds one", {"a.csv": b"0123456789"})
    client2 = TestClient(create_app(engine2))
    assert client2.get(f"/folder/{folder_id}", headers=headers).status_code == 200
    assert client2.get(f"/tale/{tale['id']}", headers=headers).status_code == 200
    assert (
        client2.get(f"/image/{image['id']}", headers=headers).json()["image"]["digest"]
        == image["digest"]
    )
    engine2.close()
    report("api contract", f"{attempts} scope-stripped attempts all >= 400; restart preserved resources")
