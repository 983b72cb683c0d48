"""REST service over the engine.

JSON over HTTP/1.1 under a single /v1-free surface; every error is a stable
envelope ``{"error": {"code": ..., "message": ...}}`` whose code matches the
module error names. Long-running work (registration, image builds) returns
202 plus a job record whose events can be streamed as newline-delimited
JSON. The dashboard's static bundle, when configured, is served from /app.
"""

from __future__ import annotations

import argparse
import json
import socket
import threading
from typing import Dict, List, Optional

import uvicorn
from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .catalog import Node
from .dms import Session
from .engine import Engine, EngineConfig
from .errors import ConfigInvalid, PortInUse, TaleKitError, Unauthorized
from .jobs import JobRecord
from .orchestrator import Instance
from .tales import Image, Recipe, Tale, TaleMetadata


# -- serialization helpers ----------------------------------------------------

def node_json(node: Node) -> dict:
    return {
        "id": node.id,
        "kind": node.kind,
        "name": node.name,
        "parent": node.parent,
        "metadata": dict(node.metadata),
        "created": node.created,
        "modified": node.modified,
    }


def image_json(image: Image) -> dict:
    return image.to_dict()


def recipe_json(recipe: Recipe) -> dict:
    return recipe.to_dict()


def tale_json(tale: Tale) -> dict:
    return tale.to_dict()


def instance_json(inst: Instance) -> dict:
    return inst.to_dict()


def job_json(job: JobRecord) -> dict:
    return job.to_dict()


def session_json(session: Session) -> dict:
    return session.to_dict()


# -- request bodies -----------------------------------------------------------

class TokenRequest(BaseModel):
    issuer: str
    subject: str
    proof: str
    scopes: Optional[List[str]] = None


class LinkRequest(BaseModel):
    a: TokenRequest
    b: TokenRequest


class RegisterRequest(BaseModel):
    identifier: str


class FolderRequest(BaseModel):
    parent: str
    name: str


class NodePatch(BaseModel):
    move_to: Optional[str] = None
    rename_to: Optional[str] = None
    annotate: Optional[Dict[str, str]] = None


class SessionRequest(BaseModel):
    roots: List[str]


class RecipeRequest(BaseModel):
    name: str
    repo_url: str
    commit_id: str
    config: Optional[Dict[str, str]] = None


class ImageRequest(BaseModel):
    recipe_id: str


class TaleRequest(BaseModel):
    image_id: str
    folder_id: str
    metadata: Optional[dict] = None


class PublishRequest(BaseModel):
    status: str = "Published"


class InstanceRequest(BaseModel):
    tale_id: str


def create_app(
    engine: Engine,
    cors_origins: Optional[List[str]] = None,
    app_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="talekit", version="0.1.0")
    app.state.engine = engine

    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(TaleKitError)
    async def talekit_error(request: Request, exc: TaleKitError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": {"code": "ValidationError", "message": str(exc)}},
        )

    def bearer(request: Request) -> str:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise Unauthorized("missing bearer token")
        return header[7:].strip()

    # -- public -----------------------------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/auth/token")
    def auth_token(body: TokenRequest):
        token = engine.auth.authenticate(
            body.issuer,
            body.subject,
            body.proof,
            scopes=set(body.scopes) if body.scopes is not None else None,
        )
        ident = engine.auth.identity(token.identity)
        return {
            "token": token.value,
            "scopes": sorted(token.scopes),
            "expiry": token.expiry,
            "identity": {
                "id": ident.id,
                "issuer": ident.issuer,
                "subject": ident.subject,
            },
        }

    @app.post("/auth/link")
    def auth_link(body: LinkRequest):
        members = engine.auth.link_identities(
            (body.a.issuer, body.a.subject, body.a.proof),
            (body.b.issuer, body.b.subject, body.b.proof),
        )
        return {"identity_set": sorted(members)}

    # -- data -----------------------------------------------------------------

    @app.post("/dataset/register", status_code=202)
    def register(body: RegisterRequest, token: str = Depends(bearer)):
        job = engine.register_dataset_job(token, body.identifier)
        return {"job": job_json(job)}

    @app.get("/root")
    def get_root(token: str = Depends(bearer)):
        engine.check(token, "data:read")
        root = engine.root_collection
        return {
            "node": node_json(root),
            "children": [node_json(c) for c in engine.list_children(token, root.id)],
        }

    @app.get("/folder/{node_id}")
    def get_folder(node_id: str, token: str = Depends(bearer)):
        node = engine.get_node(token, node_id)
        children = []
        if node.kind in ("Collection", "Folder"):
            children = engine.list_children(token, node_id)
        return {"node": node_json(node), "children": [node_json(c) for c in children]}

    @app.get("/node")
    def get_node_by_path(path: str, token: str = Depends(bearer)):
        node = engine.resolve_path(token, path)
        children = []
        if node.kind in ("Collection", "Folder"):
            children = engine.list_children(token, node.id)
        files = []
        if node.kind == "Item":
            files = [
                {"size": r.size, "provenance": r.provenance.to_dict()}
                for r in engine.catalog.file_refs(node.id)
            ]
        return {
            "node": node_json(node),
            "children": [node_json(c) for c in children],
            "files": files,
        }

    @app.post("/folder", status_code=201)
    def post_folder(body: FolderRequest, token: str = Depends(bearer)):
        return {"node": node_json(engine.create_folder(token, body.parent, body.name))}

    @app.patch("/node/{node_id}")
    def patch_node(node_id: str, body: NodePatch, token: str = Depends(bearer)):
        node = None
        if body.move_to is not None:
            node = engine.move_node(token, node_id, body.move_to)
        if body.rename_to is not None:
            node = engine.rename_node(token, node_id, body.rename_to)
        if body.annotate:
            for key, value in body.annotate.items():
                node = engine.annotate(token, node_id, key, value)
        if node is None:
            node = engine.get_node(token, node_id)
        return {"node": node_json(node)}

    # -- sessions ---------------------------------------------------------------

    @app.post("/session", status_code=201)
    def post_session(body: SessionRequest, token: str = Depends(bearer)):
        session = engine.create_session(token, body.roots)
        return {"session": session_json(session)}

    @app.get("/session/{session_id}/tree")
    def get_session_tree(session_id: str, token: str = Depends(bearer)):
        return {"tree": engine.session_tree(token, session_id)}

    # -- tales --------------------------------------------------------------------

    @app.post("/recipe", status_code=201)
    def post_recipe(body: RecipeRequest, token: str = Depends(bearer)):
        recipe = engine.create_recipe(
            token, body.name, body.repo_url, body.commit_id, body.config
        )
        return {"recipe": recipe_json(recipe)}

    @app.get("/recipe")
    def list_recipes(token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"recipes": [recipe_json(r) for r in engine.tales.list_recipes()]}

    @app.post("/image", status_code=202)
    def post_image(body: ImageRequest, token: str = Depends(bearer)):
        image, job = engine.build_image_job(token, body.recipe_id)
        return {"image": image_json(image), "job": job_json(job)}

    @app.get("/image/{image_id}")
    def get_image(image_id: str, token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"image": image_json(engine.tales.get_image(image_id))}

    @app.get("/image")
    def list_images(token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"images": [image_json(i) for i in engine.tales.list_images()]}

    @app.post("/tale", status_code=201)
    def post_tale(body: TaleRequest, token: str = Depends(bearer)):
        metadata = TaleMetadata.from_dict(body.metadata or {})
        tale = engine.create_tale(token, body.image_id, body.folder_id, metadata)
        return {"tale": tale_json(tale)}

    @app.get("/tale/{tale_id}")
    def get_tale(tale_id: str, token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"tale": tale_json(engine.tales.get_tale(tale_id))}

    @app.get("/tale")
    def list_tales(token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"tales": [tale_json(t) for t in engine.tales.list_tales()]}

    @app.post("/tale/{tale_id}/publish")
    def publish_tale(tale_id: str, body: PublishRequest, token: str = Depends(bearer)):
        return {"tale": tale_json(engine.publish_tale(token, tale_id, body.status))}

    @app.get("/tale/{tale_id}/export")
    def export_tale(tale_id: str, token: str = Depends(bearer)):
        return engine.export_tale(token, tale_id)

    @app.post("/tale/import", status_code=201)
    def import_tale(manifest: dict, token: str = Depends(bearer)):
        return {"tale": tale_json(engine.import_tale(token, manifest))}

    # -- instances -------------------------------------------------------------------

    @app.post("/instance", status_code=201)
    def post_instance(body: InstanceRequest, token: str = Depends(bearer)):
        return {"instance": instance_json(engine.launch_instance(token, body.tale_id))}

    @app.get("/instance")
    def list_instances(token: str = Depends(bearer)):
        engine.check(token, "data:read")
        return {"instances": [instance_json(i) for i in engine.orchestrator.list_instances()]}

    @app.get("/instance/{instance_id}")
    def get_instance(instance_id: str, token: str = Depends(bearer)):
        return {"instance": instance_json(engine.get_instance(token, instance_id))}

    @app.post("/instance/{instance_id}/suspend")
    def suspend_instance(instance_id: str, token: str = Depends(bearer)):
        return {"instance": instance_json(engine.suspend_instance(token, instance_id))}

    @app.post("/instance/{instance_id}/resume")
    def resume_instance(instance_id: str, token: str = Depends(bearer)):
        return {"instance": instance_json(engine.resume_instance(token, instance_id))}

    @app.delete("/instance/{instance_id}")
    def delete_instance(instance_id: str, token: str = Depends(bearer)):
        engine.delete_instance(token, instance_id)
        return {"deleted": instance_id}

    @app.get("/route")
    def route_lookup(path: str, token: str = Depends(bearer)):
        engine.check(token, "data:read")
        host, port = engine.orchestrator.route_lookup(path)
        return {"host": host, "internal_port": port}

    # -- jobs -----------------------------------------------------------------------

    @app.get("/job/{job_id}")
    def get_job(job_id: str, token: str = Depends(bearer)):
        return {"job": job_json(engine.get_job(token, job_id))}

    @app.get("/job/{job_id}/events")
    def job_events(job_id: str, token: str = Depends(bearer)):
        engine.get_job(token, job_id)  # authorization + existence

        def stream():
            for event in engine.jobs.subscribe(job_id):
                yield json.dumps(event) + "\n"

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.get("/cache/stats")
    def cache_stats(token: str = Depends(bearer)):
        return {"cache": engine.cache_stats(token)}

    if app_dir:
        app.mount("/app", StaticFiles(directory=app_dir, html=True), name="app")

    return app


class ApiServer:
    """Uvicorn in a background thread; handy for tests, demos, and e2e."""

    def __init__(
        self,
        engine: Engine,
        host: str = "127.0.0.1",
        port: int = 8080,
        cors_origins: Optional[List[str]] = None,
        app_dir: Optional[str] = None,
    ):
        if port != 0:
            probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                probe.bind((host, port))
            except OSError as exc:
                raise PortInUse(f"cannot bind {host}:{port}: {exc}") from exc
            finally:
                probe.close()
        self.engine = engine
        self.app = create_app(engine, cors_origins, app_dir)
        config = uvicorn.Config(self.app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread: Optional[threading.Thread] = None
        self.host = host
        self.port = port

    def start(self, wait: float = 10.0) -> "ApiServer":
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        import time

        deadline = time.time() + wait
        while time.time() < deadline:
            if self._server.started:
                for server in self._server.servers:
                    for sock in server.sockets:
                        self.port = sock.getsockname()[1]
                return self
            time.sleep(0.02)
        raise ConfigInvalid("server did not start in time")

    def stop(self) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)
        self.engine.close()

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"


def main(argv: Optional[List[str]] = None) -> None:
    parser = argparse.ArgumentParser(prog="wt-server", description="talekit REST service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--data-dir", default=None, help="persistent state directory")
    parser.add_argument("--fixtures", default=None, help="mock provider fixture JSON")
    parser.add_argument("--secret", default="s3cret", help="local issuer shared secret")
    parser.add_argument("--capacity", type=int, default=256 * 1024 * 1024)
    parser.add_argument("--build-delay", type=float, default=0.2)
    parser.add_argument("--app-dir", default=None, help="dashboard static bundle directory")
    args = parser.parse_args(argv)

    engine = Engine(
        EngineConfig(
            data_dir=args.data_dir,
            cache_capacity=args.capacity,
            build_delay=args.build_delay,
            auth_secret=args.secret,
            fixture_path=args.fixtures,
        )
    )
    engine.dms.start_gc()
    server = ApiServer(engine, host=args.host, port=args.port, app_dir=args.app_dir)
    server.start()
    print(f"talekit API listening on {server.url}")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
