"""Command-line client (and `serve` entrypoint) for a running service instance.

Every command is a thin client: it assembles requests against the HTTP API and
prints the responses, nothing more. Exit codes by error class: 1 usage,
2 authentication/authorization, 3 not found, 4 quota, 5 server/transport.
"""
from __future__ import annotations

import json
import sys
import time
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Any, Optional
from urllib.parse import urljoin

import click
import httpx

EXIT_USAGE = 1
EXIT_AUTH = 2
EXIT_NOT_FOUND = 3
EXIT_QUOTA = 4
EXIT_SERVER = 5

TERMINAL = {"COMPLETED", "ERROR", "CANCELED", "REJECTED"}


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _exit_code_for(status: int) -> int:
    if status in (401, 403):
        return EXIT_AUTH
    if status == 404:
        return EXIT_NOT_FOUND
    if status == 429:
        return EXIT_QUOTA
    if status >= 500:
        return EXIT_SERVER
    return EXIT_USAGE


class Client:
    def __init__(self, url: str, token: str):
        self.base = url.rstrip("/")
        self._http = httpx.Client(
            base_url=self.base,
            headers={"Authorization": f"Bearer {token}"},
            timeout=30.0,
        )

    def request(self, method: str, path: str, **kwargs: Any) -> Any:
        try:
            response = self._http.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise CliError(f"cannot reach {self.base}: {exc}", EXIT_SERVER) from exc
        if response.status_code >= 400:
            try:
                envelope = response.json()
                message = f"{envelope.get('code', 'error')}: {envelope.get('message', '')}"
                details = envelope.get("details")
                if details:
                    message += f" ({json.dumps(details)})"
            except json.JSONDecodeError:
                message = response.text
            raise CliError(message, _exit_code_for(response.status_code))
        if response.headers.get("content-type", "").startswith("application/json"):
            return response.json()
        return response.content

    def raw(self, method: str, url: str, **kwargs: Any) -> httpx.Response:
        """For signed links, which may live outside the API base."""
        target = urljoin(self.base + "/", url)
        response = httpx.request(method, target, timeout=60.0, **kwargs)
        if response.status_code >= 400:
            raise CliError(
                f"link request failed ({response.status_code}): {response.text}",
                _exit_code_for(response.status_code),
            )
        return response

    def execution(self, uuid: str) -> tuple[str, dict[str, Any]]:
        """Tasks and workflows share one id namespace; probe both groups."""
        for group in ("tasks", "workflows"):
            try:
                return group, self.request("GET", f"/api/{group}/{uuid}")
            except CliError as exc:
                if exc.exit_code != EXIT_NOT_FOUND:
                    raise
        raise CliError(f"no execution with uuid {uuid}", EXIT_NOT_FOUND)


def _echo_json(payload: Any) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _record_line(record: dict[str, Any]) -> str:
    return "\t".join(
        [
            record.get("uuid", ""),
            record.get("kind", ""),
            record.get("status", ""),
            record.get("submitted_at", "") or "",
            record.get("updated_at", "") or "",
            record.get("name") or "-",
        ]
    )


@click.group()
@click.option("--url", envvar="TASKLAB_URL", default="http://127.0.0.1:8080", show_default=True)
@click.option("--token", envvar="TASKLAB_TOKEN", default="", help="API key")
@click.option("--json", "as_json", is_flag=True, help="emit raw wire bodies")
@click.pass_context
def main(ctx: click.Context, url: str, token: str, as_json: bool) -> None:
    """Client for the execution gateway: tasks, workflows, files, experiments."""
    ctx.obj = {"client": Client(url, token), "json": as_json}


def _client(ctx: click.Context) -> Client:
    return ctx.obj["client"]


def _load_document(path: str) -> Any:
    if path.startswith("fixture:"):
        name = path[len("fixture:") :]
        ref = importlib_resources.files("tasklab") / "fixtures" / name
        return json.loads(ref.read_text())
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}", EXIT_USAGE) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}", EXIT_USAGE) from exc


@main.command("submit-task")
@click.argument("file")
@click.pass_context
def submit_task(ctx: click.Context, file: str) -> None:
    """Submit a task definition from FILE (or fixture:<name>)."""
    record = _client(ctx).request("POST", "/api/tasks", json=_load_document(file))
    if ctx.obj["json"]:
        _echo_json(record)
    else:
        click.echo(record["uuid"])


@main.command("submit-workflow")
@click.argument("file")
@click.pass_context
def submit_workflow(ctx: click.Context, file: str) -> None:
    """Submit a workflow definition from FILE (or fixture:<name>)."""
    record = _client(ctx).request("POST", "/api/workflows", json=_load_document(file))
    if ctx.obj["json"]:
        _echo_json(record)
    else:
        click.echo(record["uuid"])


@main.command("list")
@click.option("--kind", type=click.Choice(["task", "workflow", "all"]), default="all")
@click.option("--status", "status_filter", default=None)
@click.option("--page", default=1)
@click.option("--page-size", default=20)
@click.pass_context
def list_executions(
    ctx: click.Context, kind: str, status_filter: Optional[str], page: int, page_size: int
) -> None:
    """List submitted executions, newest first."""
    params: dict[str, Any] = {"page": page, "page_size": page_size}
    if status_filter:
        params["status"] = status_filter
    groups = ["tasks", "workflows"] if kind == "all" else [kind + "s"]
    pages = [_client(ctx).request("GET", f"/api/{group}", params=params) for group in groups]
    if ctx.obj["json"]:
        _echo_json(pages if len(pages) > 1 else pages[0])
        return
    items = [item for page_doc in pages for item in page_doc["items"]]
    items.sort(key=lambda r: r.get("submitted_at", ""), reverse=True)
    for item in items:
        click.echo(_record_line(item))


@main.command("status")
@click.argument("uuid")
@click.option("--watch", is_flag=True, help="poll until the execution is terminal")
@click.option("--interval", default=2.0, show_default=True)
@click.pass_context
def status(ctx: click.Context, uuid: str, watch: bool, interval: float) -> None:
    """Print the current status of an execution."""
    client = _client(ctx)
    last = None
    while True:
        _, record = client.execution(uuid)
        if ctx.obj["json"] and not watch:
            _echo_json(record)
            return
        if record["status"] != last:
            click.echo(record["status"] if not watch else f"{record['updated_at']}\t{record['status']}")
            last = record["status"]
        if not watch or record["status"] in TERMINAL:
            return
        time.sleep(interval)


@main.command("logs")
@click.argument("uuid")
@click.option("--stderr", "use_stderr", is_flag=True, help="fetch stderr instead of stdout")
@click.pass_context
def logs(ctx: click.Context, uuid: str, use_stderr: bool) -> None:
    """Print per-executor captured output."""
    client = _client(ctx)
    group, _ = client.execution(uuid)
    channel = "stderr" if use_stderr else "stdout"
    texts = client.request("GET", f"/api/{group}/{uuid}/{channel}")
    if ctx.obj["json"]:
        _echo_json(texts)
        return
    for index, text in enumerate(texts):
        if len(texts) > 1:
            click.echo(f"--- executor {index} ---")
        click.echo(text, nl=False)


@main.command("cancel")
@click.argument("uuid")
@click.pass_context
def cancel(ctx: click.Context, uuid: str) -> None:
    """Cancel an ongoing execution (idempotent on finished ones)."""
    client = _client(ctx)
    group, _ = client.execution(uuid)
    record = client.request("POST", f"/api/{group}/{uuid}/cancel")
    if ctx.obj["json"]:
        _echo_json(record)
    else:
        flag = " (already terminal)" if record.get("already_terminal") else ""
        click.echo(f"{record['status']}{flag}")


@main.command("resubmit")
@click.argument("uuid")
@click.pass_context
def resubmit(ctx: click.Context, uuid: str) -> None:
    """Fetch an execution's definition and submit it as a fresh execution."""
    client = _client(ctx)
    group, record = client.execution(uuid)
    fresh = client.request("POST", f"/api/{group}", json=record["definition"])
    if ctx.obj["json"]:
        _echo_json(fresh)
    else:
        click.echo(fresh["uuid"])


@main.command("quotas")
@click.pass_context
def quotas(ctx: click.Context) -> None:
    """Show the applied quotas and current usage."""
    payload = _client(ctx).request("GET", "/api/quotas")
    if ctx.obj["json"]:
        _echo_json(payload)
        return
    for view in ("user_quota", "context_quota", "effective"):
        limits = {k: v for k, v in payload[view].items() if v is not None}
        click.echo(f"{view}: {json.dumps(limits) if limits else 'unlimited'}")
    click.echo(f"current_usage: {json.dumps(payload['current_usage'])}")


# -- files ----------------------------------------------------------------------


@main.group()
def files() -> None:
    """File management in the caller's bucket."""


@files.command("ls")
@click.option("--prefix", default="")
@click.pass_context
def files_ls(ctx: click.Context, prefix: str) -> None:
    payload = _client(ctx).request("GET", "/storage/files", params={"prefix": prefix})
    if ctx.obj["json"]:
        _echo_json(payload)
        return
    for obj in payload["items"]:
        click.echo(f"{obj['size_bytes']}\t{obj['modified_at']}\t{obj['key']}")


@files.command("put")
@click.argument("local", type=click.Path(exists=True, dir_okay=False))
@click.argument("key")
@click.pass_context
def files_put(ctx: click.Context, local: str, key: str) -> None:
    """Upload LOCAL through a fresh upload link to KEY."""
    client = _client(ctx)
    link = client.request("POST", "/storage/files", json={"key": key})
    client.raw("PUT", link["url"], content=Path(local).read_bytes())
    click.echo(key)


@files.command("get")
@click.argument("key")
@click.argument("local", required=False)
@click.pass_context
def files_get(ctx: click.Context, key: str, local: Optional[str]) -> None:
    """Download KEY via a download link to LOCAL (or stdout)."""
    client = _client(ctx)
    meta = client.request("GET", f"/storage/files/{key}")
    data = client.raw("GET", meta["download"]["url"]).content
    if local:
        Path(local).write_bytes(data)
        click.echo(f"{key} -> {local} ({len(data)} bytes)")
    else:
        sys.stdout.buffer.write(data)


@files.command("mv")
@click.argument("from_key")
@click.argument("to_key")
@click.option("--overwrite", is_flag=True)
@click.pass_context
def files_mv(ctx: click.Context, from_key: str, to_key: str, overwrite: bool) -> None:
    moved = _client(ctx).request(
        "PATCH", f"/storage/files/{from_key}", json={"to_key": to_key, "overwrite": overwrite}
    )
    click.echo(moved["key"])


@files.command("rm")
@click.argument("key")
@click.pass_context
def files_rm(ctx: click.Context, key: str) -> None:
    _client(ctx).request("DELETE", f"/storage/files/{key}")
    click.echo(f"deleted {key}")


# -- experiments --------------------------------------------------------------------


@main.group()
def experiment() -> None:
    """Group finished executions into named experiments."""


@experiment.command("create")
@click.argument("name")
@click.option("--description", default=None)
@click.option("--participants", default="", help="comma-separated usernames")
@click.pass_context
def experiment_create(
    ctx: click.Context, name: str, description: Optional[str], participants: str
) -> None:
    body: dict[str, Any] = {"name": name}
    if description:
        body["description"] = description
    if participants:
        body["participants"] = [p.strip() for p in participants.split(",") if p.strip()]
    experiment_doc = _client(ctx).request("POST", "/reproducibility/experiments", json=body)
    if ctx.obj["json"]:
        _echo_json(experiment_doc)
    else:
        click.echo(f"{experiment_doc['owner']}/{experiment_doc['name']}")


@experiment.command("list")
@click.pass_context
def experiment_list(ctx: click.Context) -> None:
    experiments = _client(ctx).request("GET", "/reproducibility/experiments")
    if ctx.obj["json"]:
        _echo_json(experiments)
        return
    for doc in experiments:
        click.echo(
            f"{doc['owner']}/{doc['name']}\t{doc['created_at']}\t{len(doc['task_refs'])} executions"
        )


@experiment.command("show")
@click.argument("owner")
@click.argument("name")
@click.pass_context
def experiment_show(ctx: click.Context, owner: str, name: str) -> None:
    doc = _client(ctx).request("GET", f"/reproducibility/experiments/{owner}/{name}")
    if ctx.obj["json"]:
        _echo_json(doc)
        return
    click.echo(f"{doc['owner']}/{doc['name']} in {doc['context_ref']}")
    if doc.get("description"):
        click.echo(f"description: {doc['description']}")
    click.echo(f"participants: {', '.join(doc['participants'])}")
    for uuid in doc["task_refs"]:
        click.echo(f"execution: {uuid}")
    click.echo(f"aggregates: {json.dumps(doc['aggregates'], sort_keys=True)}")


@experiment.command("assign")
@click.argument("owner")
@click.argument("name")
@click.argument("uuids", nargs=-1, required=False)
@click.pass_context
def experiment_assign(ctx: click.Context, owner: str, name: str, uuids: tuple[str, ...]) -> None:
    """Replace the experiment's execution set with UUIDS."""
    doc = _client(ctx).request(
        "PUT",
        f"/reproducibility/experiments/{owner}/{name}/tasks",
        json={"task_uuids": list(uuids)},
    )
    if ctx.obj["json"]:
        _echo_json(doc)
    else:
        click.echo(f"{len(doc['task_refs'])} executions assigned")


@experiment.command("delete")
@click.argument("owner")
@click.argument("name")
@click.pass_context
def experiment_delete(ctx: click.Context, owner: str, name: str) -> None:
    _client(ctx).request("DELETE", f"/reproducibility/experiments/{owner}/{name}")
    click.echo(f"deleted {owner}/{name}")


# -- demo scenarios ---------------------------------------------------------------------


def _watch_until_terminal(client: Client, uuid: str, interval: float = 0.5) -> str:
    while True:
        _, record = client.execution(uuid)
        if record["status"] in TERMINAL:
            return record["status"]
        time.sleep(interval)


@main.command("demo")
@click.argument("scenario", type=click.Choice(["1", "2", "3"]))
@click.pass_context
def demo(ctx: click.Context, scenario: str) -> None:
    """Run one of the bundled demonstration scenarios end to end."""
    client = _client(ctx)
    if scenario == "1":
        record = client.request(
            "POST", "/api/tasks", json=_load_document("fixture:scenario1_echo_task.json")
        )
        click.echo(f"submitted task {record['uuid']}")
        final = _watch_until_terminal(client, record["uuid"])
        click.echo(f"status: {final}")
        stdout = client.request("GET", f"/api/tasks/{record['uuid']}/stdout")
        click.echo("stdout: " + "".join(stdout), nl=False)
    elif scenario == "2":
        record = client.request(
            "POST", "/api/workflows", json=_load_document("fixture:scenario2_diamond_workflow.json")
        )
        click.echo(f"submitted workflow {record['uuid']} plan={record['plan']}")
        final = _watch_until_terminal(client, record["uuid"])
        click.echo(f"status: {final}")
        listing = client.request("GET", "/storage/files", params={"prefix": "results/diamond/"})
        for obj in listing["items"]:
            click.echo(f"output: {obj['key']} ({obj['size_bytes']} bytes)")
    else:
        uuids = []
        for fixture in ("scenario3_task_a.json", "scenario3_task_b.json"):
            record = client.request("POST", "/api/tasks", json=_load_document(f"fixture:{fixture}"))
            uuids.append(record["uuid"])
            click.echo(f"submitted task {record['uuid']}")
        for uuid in uuids:
            _watch_until_terminal(client, uuid)
        name = f"demo-experiment-{int(time.time())}"
        experiment_doc = client.request(
            "POST", "/reproducibility/experiments", json={"name": name}
        )
        owner = experiment_doc["owner"]
        client.request(
            "PUT",
            f"/reproducibility/experiments/{owner}/{name}/tasks",
            json={"task_uuids": uuids},
        )
        detail = client.request("GET", f"/reproducibility/experiments/{owner}/{name}")
        click.echo(f"experiment {owner}/{name}: {sorted(detail['task_refs'])}")
        click.echo(f"aggregates: {json.dumps(detail['aggregates'], sort_keys=True)}")


# -- server -----------------------------------------------------------------------------


@main.command("serve")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve(host: Optional[str], port: Optional[int]) -> None:
    """Run the service (configured through TASKLAB_* environment variables)."""
    import uvicorn

    from .api import create_app
    from .config import Config
    from .service import build_service

    config = Config.from_env()
    if host:
        config.host = host
    if port:
        config.port = port
    service = build_service(config).start()
    try:
        uvicorn.run(create_app(service), host=config.host, port=config.port, log_level="info")
    finally:
        service.stop()


if __name__ == "__main__":
    main()
