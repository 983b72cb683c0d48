"""``wt`` — command-line client for the talekit REST service.

Configuration precedence: command-line flags, then WT_API_URL / WT_TOKEN
environment variables, then ~/.config/wholetale/cli.toml (simple
``key = "value"`` lines). The token is never echoed by any command except
``login``, whose whole point is to hand it to the caller.
"""

from __future__ import annotations

import json
import os
import sys
import time
from typing import Any, Dict, Optional

import click
import httpx

CONFIG_PATH = os.path.join(os.path.expanduser("~"), ".config", "wholetale", "cli.toml")


def _read_config_file(path: Optional[str] = None) -> Dict[str, str]:
    path = path or CONFIG_PATH
    values: Dict[str, str] = {}
    if not os.path.exists(path):
        return values
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip().strip('"').strip("'")
    return values


class ApiError(Exception):
    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


class WtClient:
    def __init__(self, api_url: str, token: Optional[str]):
        self.api_url = api_url.rstrip("/")
        self.token = token
        self._client = httpx.Client(base_url=self.api_url, timeout=30.0)

    def _headers(self) -> Dict[str, str]:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def request(self, method: str, path: str, body: Optional[dict] = None, params=None) -> Any:
        try:
            resp = self._client.request(
                method, path, json=body, params=params, headers=self._headers()
            )
        except httpx.HTTPError as exc:
            raise ApiError(
                "NetworkError", f"{exc} (is the service up? retry or check --api-url)", 0
            ) from exc
        if resp.status_code >= 400:
            try:
                envelope = resp.json().get("error", {})
            except json.JSONDecodeError:
                envelope = {}
            raise ApiError(
                envelope.get("code", "HttpError"),
                envelope.get("message", resp.text[:200]),
                resp.status_code,
            )
        if resp.headers.get("content-type", "").startswith("application/json"):
            return resp.json()
        return resp.text

    def get(self, path: str, params=None) -> Any:
        return self.request("GET", path, params=params)

    def post(self, path: str, body: Optional[dict] = None) -> Any:
        return self.request("POST", path, body)

    def wait_job(self, job_id: str, timeout: float = 60.0, quiet: bool = False) -> dict:
        deadline = time.time() + timeout
        seen = 0
        while time.time() < deadline:
            job = self.get(f"/job/{job_id}")["job"]
            for event in job["events"][seen:]:
                if not quiet:
                    pct = event.get("progress", job["progress"])
                    click.echo(f"  [{pct:3d}%] {event['message']}", err=True)
            seen = len(job["events"])
            if job["status"] in ("Done", "Failed"):
                return job
            time.sleep(0.1)
        raise ApiError("Timeout", f"job {job_id} did not finish in {timeout}s", 0)


def _emit(ctx: click.Context, payload: Any, human: str) -> None:
    if ctx.obj["json"]:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(human)


def _fail(exc: ApiError) -> None:
    click.echo(f"error {exc.code}: {exc.message}", err=True)
    sys.exit(1)


@click.group()
@click.option("--api-url", default=None, help="service URL (or WT_API_URL)")
@click.option("--token", default=None, help="bearer token (or WT_TOKEN)")
@click.option("--json", "json_out", is_flag=True, help="machine-readable output")
@click.pass_context
def main(ctx: click.Context, api_url: Optional[str], token: Optional[str], json_out: bool):
    """Client for the talekit reproducible-research service."""
    file_cfg = _read_config_file()
    resolved_url = api_url or os.environ.get("WT_API_URL") or file_cfg.get("api_url")
    resolved_token = token or os.environ.get("WT_TOKEN") or file_cfg.get("token")
    ctx.obj = {
        "client": WtClient(resolved_url or "http://127.0.0.1:8080", resolved_token),
        "json": json_out,
    }


@main.command()
@click.option("--issuer", default="local")
@click.option("--subject", required=True)
@click.option("--proof", required=True)
@click.option("--save", is_flag=True, help="write token to the config file")
@click.pass_context
def login(ctx, issuer, subject, proof, save):
    """Authenticate and print a bearer token."""
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post("/auth/token", {"issuer": issuer, "subject": subject, "proof": proof})
    except ApiError as exc:
        _fail(exc)
    if save:
        os.makedirs(os.path.dirname(CONFIG_PATH), exist_ok=True)
        with open(CONFIG_PATH, "w", encoding="utf-8") as fh:
            fh.write(f'api_url = "{client.api_url}"\ntoken = "{doc["token"]}"\n')
    _emit(ctx, doc, doc["token"])


@main.command()
@click.argument("identifier")
@click.option("--wait/--no-wait", default=True, help="wait for the job to finish")
@click.pass_context
def register(ctx, identifier, wait):
    """Register an external dataset by identifier."""
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post("/dataset/register", {"identifier": identifier})
        job = doc["job"]
        if not ctx.obj["json"]:
            click.echo(f"job {job['id']}")
        if wait:
            job = client.wait_job(job["id"], quiet=ctx.obj["json"])
            if job["status"] != "Done":
                raise ApiError("JobFailed", job["events"][-1]["message"], 0)
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, {"job": job}, f"registered: {job['result'].get('folder_id', '?')}")


@main.command()
@click.argument("path", default="/")
@click.pass_context
def ls(ctx, path):
    """List a catalog path."""
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.get("/node", params={"path": path})
    except ApiError as exc:
        _fail(exc)
    lines = []
    for child in doc["children"]:
        marker = "/" if child["kind"] in ("Collection", "Folder") else ""
        lines.append(child["name"] + marker)
    for ref in doc.get("files", []):
        lines.append(f"{doc['node']['name']} ({ref['size']} bytes)")
    _emit(ctx, doc, "\n".join(lines) if lines else "(empty)")


@main.group()
def session():
    """Session operations."""


@session.command("create")
@click.option("--root", "roots", multiple=True, required=True, help="catalog node id")
@click.pass_context
def session_create(ctx, roots):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post("/session", {"roots": list(roots)})
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, doc, doc["session"]["id"])


@main.group()
def recipe():
    """Recipe operations."""


@recipe.command("add")
@click.option("--name", required=True)
@click.option("--repo-url", required=True)
@click.option("--commit", required=True)
@click.option("--config", "config_pairs", multiple=True, help="key=value, repeatable")
@click.pass_context
def recipe_add(ctx, name, repo_url, commit, config_pairs):
    client: WtClient = ctx.obj["client"]
    config = {}
    for pair in config_pairs:
        key, _, value = pair.partition("=")
        config[key] = value
    try:
        doc = client.post(
            "/recipe",
            {"name": name, "repo_url": repo_url, "commit_id": commit, "config": config},
        )
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, doc, doc["recipe"]["id"])


@main.group()
def image():
    """Image operations."""


@image.command("build")
@click.option("--recipe", "recipe_id", required=True)
@click.option("--wait/--no-wait", default=True)
@click.pass_context
def image_build(ctx, recipe_id, wait):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post("/image", {"recipe_id": recipe_id})
        if wait:
            client.wait_job(doc["job"]["id"], quiet=ctx.obj["json"])
            doc["image"] = client.get(f"/image/{doc['image']['id']}")["image"]
            if doc["image"]["status"] != "Ready":
                raise ApiError("BuildFailed", doc["image"]["build_log"], 0)
    except ApiError as exc:
        _fail(exc)
    img = doc["image"]
    _emit(ctx, doc, f"{img['id']} {img['status']} {img.get('digest') or ''}".strip())


@main.group()
def tale():
    """Tale operations."""


@tale.command("create")
@click.option("--image", "image_id", required=True)
@click.option("--folder", "folder_id", required=True)
@click.option("--title", default="")
@click.option("--author", "authors", multiple=True)
@click.pass_context
def tale_create(ctx, image_id, folder_id, title, authors):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post(
            "/tale",
            {
                "image_id": image_id,
                "folder_id": folder_id,
                "metadata": {"title": title, "authors": list(authors)},
            },
        )
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, doc, doc["tale"]["id"])


@tale.command("export")
@click.argument("tale_id")
@click.pass_context
def tale_export(ctx, tale_id):
    """Print the tale manifest (canonical JSON)."""
    client: WtClient = ctx.obj["client"]
    try:
        manifest = client.get(f"/tale/{tale_id}/export")
    except ApiError as exc:
        _fail(exc)
    click.echo(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False))


@tale.command("import")
@click.argument("source")
@click.pass_context
def tale_import(ctx, source):
    """Import a tale manifest from a file, or '-' for stdin."""
    client: WtClient = ctx.obj["client"]
    raw = sys.stdin.read() if source == "-" else open(source, "r", encoding="utf-8").read()
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        click.echo(f"error SchemaInvalid: manifest is not valid JSON: {exc}", err=True)
        sys.exit(1)
    try:
        doc = client.post("/tale/import", manifest)
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, doc, doc["tale"]["id"])


@tale.command("publish")
@click.argument("tale_id")
@click.pass_context
def tale_publish(ctx, tale_id):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post(f"/tale/{tale_id}/publish", {"status": "Published"})
    except ApiError as exc:
        _fail(exc)
    _emit(ctx, doc, f"{tale_id} Published")


@main.group()
def instance():
    """Instance operations."""


@instance.command("launch")
@click.argument("tale_id")
@click.pass_context
def instance_launch(ctx, tale_id):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.post("/instance", {"tale_id": tale_id})
    except ApiError as exc:
        _fail(exc)
    inst = doc["instance"]
    _emit(ctx, doc, f"{inst['id']} {inst['state']} {inst['route_path']}")


def _instance_action(ctx, instance_id: str, action: str):
    client: WtClient = ctx.obj["client"]
    try:
        if action == "rm":
            doc = client.request("DELETE", f"/instance/{instance_id}")
            _emit(ctx, doc, f"{instance_id} deleted")
        else:
            doc = client.post(f"/instance/{instance_id}/{action}")
            inst = doc["instance"]
            _emit(ctx, doc, f"{inst['id']} {inst['state']}")
    except ApiError as exc:
        _fail(exc)


@instance.command("suspend")
@click.argument("instance_id")
@click.pass_context
def instance_suspend(ctx, instance_id):
    _instance_action(ctx, instance_id, "suspend")


@instance.command("resume")
@click.argument("instance_id")
@click.pass_context
def instance_resume(ctx, instance_id):
    _instance_action(ctx, instance_id, "resume")


@instance.command("rm")
@click.argument("instance_id")
@click.pass_context
def instance_rm(ctx, instance_id):
    _instance_action(ctx, instance_id, "rm")


@instance.command("status")
@click.argument("instance_id", required=False)
@click.pass_context
def instance_status(ctx, instance_id):
    client: WtClient = ctx.obj["client"]
    try:
        if instance_id:
            doc = client.get(f"/instance/{instance_id}")
            inst = doc["instance"]
            steps = "\n".join(
                f"  {s['index']}. {s['name']}: {s['outcome']}" for s in inst["audit"]
            )
            _emit(ctx, doc, f"{inst['id']} {inst['state']} {inst['route_path']}\n{steps}")
        else:
            doc = client.get("/instance")
            lines = [f"{i['id']} {i['state']} {i['route_path']}" for i in doc["instances"]]
            _emit(ctx, doc, "\n".join(lines) if lines else "(no instances)")
    except ApiError as exc:
        _fail(exc)


@main.group()
def cache():
    """Cache operations."""


@cache.command("stats")
@click.pass_context
def cache_stats(ctx):
    client: WtClient = ctx.obj["client"]
    try:
        doc = client.get("/cache/stats")
    except ApiError as exc:
        _fail(exc)
    c = doc["cache"]
    _emit(
        ctx,
        doc,
        f"used {c['used']} / {c['capacity']} bytes in {c['entries']} entries "
        f"({c['locked']} locked)",
    )


if __name__ == "__main__":
    main()
