import json
import time

import pytest
from fastapi.testclient import TestClient

from talekit import Engine, EngineConfig
from talekit.api import create_app

SECRET = "s3cret"


def wait_job(client, headers, job_id, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/job/{job_id}", headers=headers).json()["job"]
        if job["status"] in ("Done", "Failed"):
            return job
        time.sleep(0.02)
    raise AssertionError(f"job {job_id} did not finish")


@pytest.fixture
def engine(tmp_path):
    e = Engine(EngineConfig(data_dir=str(tmp_path / "state"), build_delay=0.0))
    e.mock_provider.add_dataset(
        "mock:ds1", "ds one", {"a.csv": b"0123456789", "b.csv": b"x" * 20}
    )
    yield e
    e.close()


@pytest.fixture
def client(engine):
    return TestClient(create_app(engine))


@pytest.fixture
def auth_headers(client):
    token = client.post(
        "/auth/token", json={"issuer": "local", "subject": "alice", "proof": SECRET}
    ).json()["token"]
    return {"Authorization": f"Bearer {token}"}


def make_ready_image(client, headers):
    recipe = client.post(
        "/recipe",
        json={"name": "env", "repo_url": "https://git.example/env", "commit_id": "abc"},
        headers=headers,
    ).json()["recipe"]
    doc = client.post("/image", json={"recipe_id": recipe["id"]}, headers=headers).json()
    wait_job(client, headers, doc["job"]["id"])
    return client.get(f"/image/{doc['image']['id']}", headers=headers).json()["image"]


def register_ds1(client, headers):
    doc = client.post(
        "/dataset/register", json={"identifier": "mock:ds1"}, headers=headers
    )
    assert doc.status_code == 202
    job = wait_job(client, headers, doc.json()["job"]["id"])
    assert job["status"] == "Done"
    return job["result"]["folder_id"]


class TestBasics:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}

    def test_protected_route_without_token_is_401(self, client):
        resp = client.get("/root")
        assert resp.status_code == 401
        assert resp.json()["error"]["code"] == "Unauthorized"

    def test_bad_credentials(self, client):
        resp = client.post(
            "/auth/token", json={"issuer": "local", "subject": "x", "proof": "bad"}
        )
        assert resp.status_code == 401
        assert resp.json()["error"]["code"] == "BadCredentials"

    def test_error_envelope_has_stable_codes(self, client, auth_headers):
        resp = client.get("/folder/nonexistent", headers=auth_headers)
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "UnknownNode"
        resp = client.get("/node", params={"path": "/unknown"}, headers=auth_headers)
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "NoSuchPath"


class TestRegistration:
    def test_register_job_reaches_done(self, client, auth_headers):
        folder_id = register_ds1(client, auth_headers)
        doc = client.get(f"/folder/{folder_id}", headers=auth_headers).json()
        assert [c["name"] for c in doc["children"]] == ["a.csv", "b.csv"]

    def test_unknown_identifier_fails_job(self, client, auth_headers):
        resp = client.post(
            "/dataset/register", json={"identifier": "mock:nope"}, headers=auth_headers
        )
        job = wait_job(client, auth_headers, resp.json()["job"]["id"])
        assert job["status"] == "Failed"
        assert "UnknownIdentifier" in job["events"][-1]["message"]

    def test_job_event_stream_in_order(self, client, auth_headers):
        resp = client.post(
            "/dataset/register", json={"identifier": "mock:ds1"}, headers=auth_headers
        )
        job_id = resp.json()["job"]["id"]
        wait_job(client, auth_headers, job_id)
        with client.stream("GET", f"/job/{job_id}/events", headers=auth_headers) as stream:
            events = [json.loads(line) for line in stream.iter_lines() if line]
        assert len(events) >= 2
        progresses = [e["progress"] for e in events]
        assert progresses == sorted(progresses)
        assert progresses[-1] == 100


class TestCatalogRoutes:
    def test_folder_create_move_rename(self, client, auth_headers):
        root = client.get("/root", headers=auth_headers).json()["node"]
        a = client.post(
            "/folder", json={"parent": root["id"], "name": "A"}, headers=auth_headers
        ).json()["node"]
        b = client.post(
            "/folder", json={"parent": root["id"], "name": "B"}, headers=auth_headers
        ).json()["node"]
        moved = client.patch(
            f"/node/{b['id']}", json={"move_to": a["id"]}, headers=auth_headers
        ).json()["node"]
        assert moved["parent"] == a["id"]
        renamed = client.patch(
            f"/node/{b['id']}", json={"rename_to": "C"}, headers=auth_headers
        ).json()["node"]
        assert renamed["name"] == "C"
        annotated = client.patch(
            f"/node/{b['id']}",
            json={"annotate": {"domain": "astronomy"}},
            headers=auth_headers,
        ).json()["node"]
        assert annotated["metadata"]["domain"] == "astronomy"

    def test_duplicate_folder_conflict(self, client, auth_headers):
        root = client.get("/root", headers=auth_headers).json()["node"]
        client.post("/folder", json={"parent": root["id"], "name": "dup"}, headers=auth_headers)
        resp = client.post(
            "/folder", json={"parent": root["id"], "name": "dup"}, headers=auth_headers
        )
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "DuplicateName"

    def test_path_resolution(self, client, auth_headers):
        register_ds1(client, auth_headers)
        doc = client.get("/node", params={"path": "/data/ds one"}, headers=auth_headers)
        assert doc.status_code == 200
        assert [c["name"] for c in doc.json()["children"]] == ["a.csv", "b.csv"]


class TestSessionRoutes:
    def test_session_tree(self, client, auth_headers, engine):
        folder_id = register_ds1(client, auth_headers)
        before = engine.registry.total_bytes_transferred()
        session = client.post(
            "/session", json={"roots": [folder_id]}, headers=auth_headers
        ).json()["session"]
        tree = client.get(f"/session/{session['id']}/tree", headers=auth_headers).json()["tree"]
        assert sorted(tree["files"]) == ["/ds one/a.csv", "/ds one/b.csv"]
        assert engine.registry.total_bytes_transferred() == before == 0


class TestTaleRoutes:
    def test_full_tale_flow(self, client, auth_headers):
        folder_id = register_ds1(client, auth_headers)
        image = make_ready_image(client, auth_headers)
        assert image["status"] == "Ready"
        tale = client.post(
            "/tale",
            json={
                "image_id": image["id"],
                "folder_id": folder_id,
                "metadata": {"title": "Glass", "authors": ["A"]},
            },
            headers=auth_headers,
        ).json()["tale"]
        manifest = client.get(f"/tale/{tale['id']}/export", headers=auth_headers).json()
        assert manifest["wholetale_manifest_version"] == "1"
        assert len(manifest["data"]) == 2
        imported = client.post("/tale/import", json=manifest, headers=auth_headers)
        assert imported.status_code == 201
        assert not imported.json()["tale"]["degraded"]

    def test_publish_gate(self, client, auth_headers):
        folder_id = register_ds1(client, auth_headers)
        image = make_ready_image(client, auth_headers)
        tale = client.post(
            "/tale",
            json={
                "image_id": image["id"],
                "folder_id": folder_id,
                "metadata": {"title": "T", "authors": ["A"]},
            },
            headers=auth_headers,
        ).json()["tale"]
        resp = client.post(f"/tale/{tale['id']}/publish", json={}, headers=auth_headers)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "ValidationFailed"


class TestInstanceRoutes:
    def launch(self, client, auth_headers):
        folder_id = register_ds1(client, auth_headers)
        image = make_ready_image(client, auth_headers)
        tale = client.post(
            "/tale",
            json={"image_id": image["id"], "folder_id": folder_id, "metadata": {"title": "T"}},
            headers=auth_headers,
        ).json()["tale"]
        resp = client.post("/instance", json={"tale_id": tale["id"]}, headers=auth_headers)
        assert resp.status_code == 201
        return resp.json()["instance"]

    def test_lifecycle(self, client, auth_headers):
        inst = self.launch(client, auth_headers)
        assert inst["state"] == "Running"
        assert len(inst["audit"]) == 7
        route = client.get(
            "/route", params={"path": inst["route_path"]}, headers=auth_headers
        )
        assert route.status_code == 200
        suspended = client.post(
            f"/instance/{inst['id']}/suspend", headers=auth_headers
        ).json()["instance"]
        assert suspended["state"] == "Suspended"
        assert (
            client.get("/route", params={"path": inst["route_path"]}, headers=auth_headers)
            .status_code
            == 404
        )
        resumed = client.post(
            f"/instance/{inst['id']}/resume", headers=auth_headers
        ).json()["instance"]
        assert resumed["state"] == "Running"
        assert client.delete(f"/instance/{inst['id']}", headers=auth_headers).status_code == 200
        second = client.delete(f"/instance/{inst['id']}", headers=auth_headers)
        assert second.status_code == 404
        assert second.json()["error"]["code"] == "UnknownInstance"

    def test_invalid_transition(self, client, auth_headers):
        inst = self.launch(client, auth_headers)
        client.post(f"/instance/{inst['id']}/suspend", headers=auth_headers)
        resp = client.post(f"/instance/{inst['id']}/suspend", headers=auth_headers)
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "InvalidState"


MUTATING_EXEMPT = {"/auth/token", "/auth/link"}  # credential-carrying by design


def mutating_routes(app):
    routes = []
    for route in app.routes:
        methods = getattr(route, "methods", None) or set()
        for method in methods - {"GET", "HEAD", "OPTIONS"}:
            routes.append((method, route.path))
    return routes


class TestScopeEnforcement:
    def test_scope_stripped_fuzzing_yields_zero_2xx(self, client, auth_headers, engine):
        stripped = client.post(
            "/auth/token",
            json={"issuer": "local", "subject": "weak", "proof": SECRET, "scopes": []},
        ).json()["token"]
        folder_id = register_ds1(client, auth_headers)
        image = make_ready_image(client, auth_headers)
        routes = mutating_routes(client.app)
        assert len(routes) >= 10  # the surface is actually covered
        bodies = {
            "/dataset/register": {"identifier": "mock:ds1"},
            "/folder": {"parent": folder_id, "name": "x"},
            "/session": {"roots": [folder_id]},
            "/recipe": {"name": "r", "repo_url": "https://x/y", "commit_id": "c"},
            "/image": {"recipe_id": image["recipe_id"]},
            "/tale": {"image_id": image["id"], "folder_id": folder_id, "metadata": {}},
            "/instance": {"tale_id": "t"},
        }
        for method, path in routes:
            if path in MUTATING_EXEMPT:
                continue
            concrete = (
                path.replace("{node_id}", folder_id)
                .replace("{tale_id}", "any")
                .replace("{instance_id}", "any")
                .replace("{image_id}", "any")
                .replace("{job_id}", "any")
                .replace("{session_id}", "any")
            )
            for headers in ({}, {"Authorization": f"Bearer {stripped}"}):
                resp = client.request(
                    method, concrete, json=bodies.get(path, {}), headers=headers
                )
                assert resp.status_code >= 400, f"{method} {path} -> {resp.status_code}"

    def test_scoped_out_write_is_403(self, client):
        reader = client.post(
            "/auth/token",
            json={
                "issuer": "local",
                "subject": "reader",
                "proof": SECRET,
                "scopes": ["data:read"],
            },
        ).json()["token"]
        headers = {"Authorization": f"Bearer {reader}"}
        resp = client.post(
            "/dataset/register", json={"identifier": "mock:ds1"}, headers=headers
        )
        assert resp.status_code == 403
        assert resp.json()["error"]["code"] == "AccessDenied"


class TestRestartPreservesResources:
    def test_round_trip(self, tmp_path):
        data_dir = str(tmp_path / "persist")
        engine = Engine(EngineConfig(data_dir=data_dir, build_delay=0.0))
        engine.mock_provider.add_dataset("mock:ds1", "ds one", {"a.csv": b"0123456789"})
        client = TestClient(create_app(engine))
        token = client.post(
            "/auth/token", json={"issuer": "local", "subject": "alice", "proof": SECRET}
        ).json()["token"]
        headers = {"Authorization": f"Bearer {token}"}
        folder_id = register_ds1(client, headers)
        image = make_ready_image(client, headers)
        tale = client.post(
            "/tale",
            json={"image_id": image["id"], "folder_id": folder_id, "metadata": {"title": "T"}},
            headers=headers,
        ).json()["tale"]
        inst = client.post(
            "/instance", json={"tale_id": tale["id"]}, headers=headers
        ).json()["instance"]
        engine.close()

        engine2 = Engine(EngineConfig(data_dir=data_dir, build_delay=0.0))
        engine2.mock_provider.add_dataset("mock:ds1", "ds one", {"a.csv": b"0123456789"})
        client2 = TestClient(create_app(engine2))
        # the same bearer token still works: auth state persisted
        assert client2.get(f"/folder/{folder_id}", headers=headers).status_code == 200
        assert (
            client2.get(f"/image/{image['id']}", headers=headers).json()["image"]["digest"]
            == image["digest"]
        )
        assert client2.get(f"/tale/{tale['id']}", headers=headers).status_code == 200
        revived = client2.get(f"/instance/{inst['id']}", headers=headers).json()["instance"]
        assert revived["state"] == "Running"
        assert (
            client2.get("/route", params={"path": inst["route_path"]}, headers=headers)
            .status_code
            == 200
        )
        engine2.close()


def test_port_in_use(engine):
    import socket

    from talekit.api import ApiServer
    from talekit.errors import PortInUse

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    try:
        with pytest.raises(PortInUse):
            ApiServer(engine, port=port)
    finally:
        sock.close()
