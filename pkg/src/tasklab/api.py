"""HTTP surface: every endpoint, API-key auth, uniform error envelopes."""
from __future__ import annotations

import json
from typing import Any, Optional

from fastapi import Depends, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.exceptions import HTTPException as StarletteHTTPException

from .domain import ExecutionStatus, IllegalTransition, ParseError, parse_task
from .errors import (
    BackendUnavailable,
    Forbidden,
    NotAMember,
    NotFound,
    TasklabError,
    ValidationFailed,
)
from .backends.base import SubmissionRejected
from .experiments import (
    DuplicateName,
    ParticipantNotInContext,
    SubmitterNotParticipant,
    TaskNotFound,
    TaskNotTerminal,
    TaskOutsideContext,
)
from .manager import ExecutionRecord
from .persistence import StaleWrite
from .quotas import QuotaExceeded
from .service import Service
from .storage import (
    DestinationExists,
    InputMissing,
    InvalidKey,
    LinkExpired,
    LinkInvalid,
    LocalDriver,
    ObjectNotFound,
)
from .workflow import parse_workflow

MAX_PAGE_SIZE = 100
DEFAULT_PAGE_SIZE = 20

_STATUS_BY_ERROR: list[tuple[type, int]] = [
    (QuotaExceeded, 429),
    (DuplicateName, 409),
    (DestinationExists, 409),
    (NotFound, 404),
    (ObjectNotFound, 404),
    (TaskNotFound, 400),
    (TaskOutsideContext, 400),
    (SubmitterNotParticipant, 400),
    (TaskNotTerminal, 400),
    (ParticipantNotInContext, 400),
    (ValidationFailed, 400),
    (InvalidKey, 400),
    (InputMissing, 400),
    (LinkExpired, 403),
    (LinkInvalid, 403),
    (Forbidden, 403),
    (NotAMember, 403),
    (BackendUnavailable, 503),
    (SubmissionRejected, 503),
]


def error_envelope(
    status_code: int, code: str, message: str, details: Optional[list] = None
) -> JSONResponse:
    body: dict[str, Any] = {"status_code": status_code, "code": code, "message": message}
    if details is not None:
        body["details"] = details
    return JSONResponse(status_code=status_code, content=body)


def _envelope_for(exc: Exception) -> JSONResponse:
    details: Optional[list] = None
    if isinstance(exc, ValidationFailed):
        details = list(exc.violations)
    elif isinstance(exc, QuotaExceeded):
        details = list(exc.dimensions)
    for klass, status in _STATUS_BY_ERROR:
        if isinstance(exc, klass):
            code = getattr(exc, "code", "error")
            return error_envelope(status, code, str(exc), details)
    return error_envelope(500, "internal_error", str(exc))


async def _read_json(request: Request) -> Any:
    try:
        return json.loads(await request.body() or b"null")
    except json.JSONDecodeError as exc:
        raise ParseError("body", f"invalid JSON: {exc}") from exc


def _page_params(request: Request) -> tuple[int, int]:
    try:
        page = int(request.query_params.get("page", "1"))
        page_size = int(request.query_params.get("page_size", str(DEFAULT_PAGE_SIZE)))
    except ValueError as exc:
        raise ParseError("query", "page and page_size must be integers") from exc
    return max(1, page), min(MAX_PAGE_SIZE, max(1, page_size))


def _record_response(record: ExecutionRecord, **extra: Any) -> dict[str, Any]:
    doc = record.to_dict()
    # Scheduling internals stay server-side.
    for private in ("reservation_id", "workspace"):
        doc.pop(private, None)
    doc.update(extra)
    return doc


def create_app(service: Service) -> FastAPI:
    app = FastAPI(title="tasklab", docs_url=None, redoc_url=None)
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    if service.config.dashboard_dir and service.config.dashboard_dir.is_dir():
        app.mount(
            "/dashboard",
            StaticFiles(directory=service.config.dashboard_dir, html=True),
            name="dashboard",
        )

    def identity(request: Request) -> tuple[str, str]:
        header = request.headers.get("Authorization", "")
        if not header.startswith("Bearer "):
            raise _Unauthorized("missing bearer token")
        token = header[len("Bearer ") :].strip()
        try:
            key = service.store.get_api_key(token)
        except NotFound:
            raise _Unauthorized("unknown API key") from None
        if not key.get("active", False):
            raise _Unauthorized("API key is deactivated")
        return key["user_ref"], key["context_ref"]

    auth = Depends(identity)

    # -- executions (tasks and workflows share machinery) ---------------------

    def _get_record(uuid: str, kind: str, caller_context: str) -> ExecutionRecord:
        record = service.manager.get(uuid, caller_context)
        if record.kind != kind:
            raise NotFound(f"no {kind} with uuid {uuid}")
        return record

    def _list_records(request: Request, kind: str, context: str) -> dict[str, Any]:
        page, page_size = _page_params(request)
        status_param = request.query_params.get("status")
        status = None
        if status_param:
            try:
                status = ExecutionStatus(status_param.upper())
            except ValueError as exc:
                raise ParseError("query.status", f"unknown status '{status_param}'") from exc
        return service.manager.list(
            context, status=status, kind=kind, page=page, page_size=page_size
        )

    def _submit(definition: Any, user: str, context: str) -> JSONResponse:
        record = service.manager.submit(definition, user, context)
        if record.status == ExecutionStatus.REJECTED and record.denied_dimensions:
            return error_envelope(
                429,
                "quota_exceeded",
                f"submission {record.uuid} rejected: {record.reason}",
                details=list(record.denied_dimensions),
            )
        return JSONResponse(status_code=201, content=_record_response(record))

    @app.post("/api/tasks")
    async def submit_task(request: Request, who: tuple[str, str] = auth) -> JSONResponse:
        definition = parse_task(await _read_json(request))
        return _submit(definition, *who)

    @app.get("/api/tasks")
    async def list_tasks(request: Request, who: tuple[str, str] = auth) -> dict[str, Any]:
        return _list_records(request, "task", who[1])

    @app.get("/api/tasks/{uuid}")
    async def get_task(uuid: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        return _record_response(_get_record(uuid, "task", who[1]))

    @app.post("/api/tasks/{uuid}/cancel")
    async def cancel_task(uuid: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        _get_record(uuid, "task", who[1])
        record, already_terminal = service.manager.cancel(uuid, who[1])
        return _record_response(record, already_terminal=already_terminal)

    @app.get("/api/tasks/{uuid}/stdout")
    async def task_stdout(uuid: str, who: tuple[str, str] = auth) -> list[str]:
        _get_record(uuid, "task", who[1])
        return service.manager.logs(uuid, "stdout", who[1])

    @app.get("/api/tasks/{uuid}/stderr")
    async def task_stderr(uuid: str, who: tuple[str, str] = auth) -> list[str]:
        _get_record(uuid, "task", who[1])
        return service.manager.logs(uuid, "stderr", who[1])

    @app.get("/api/quotas")
    async def get_quotas(who: tuple[str, str] = auth) -> dict[str, Any]:
        return service.quotas.get_quotas(*who)

    @app.post("/api/workflows")
    async def submit_workflow(request: Request, who: tuple[str, str] = auth) -> JSONResponse:
        definition = parse_workflow(await _read_json(request))
        return _submit(definition, *who)

    @app.get("/api/workflows")
    async def list_workflows(request: Request, who: tuple[str, str] = auth) -> dict[str, Any]:
        return _list_records(request, "workflow", who[1])

    @app.get("/api/workflows/{uuid}")
    async def get_workflow(uuid: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        return _record_response(_get_record(uuid, "workflow", who[1]))

    @app.post("/api/workflows/{uuid}/cancel")
    async def cancel_workflow(uuid: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        _get_record(uuid, "workflow", who[1])
        record, already_terminal = service.manager.cancel(uuid, who[1])
        return _record_response(record, already_terminal=already_terminal)

    @app.get("/api/workflows/{uuid}/stdout")
    async def workflow_stdout(uuid: str, who: tuple[str, str] = auth) -> list[str]:
        _get_record(uuid, "workflow", who[1])
        return service.manager.logs(uuid, "stdout", who[1])

    @app.get("/api/workflows/{uuid}/stderr")
    async def workflow_stderr(uuid: str, who: tuple[str, str] = auth) -> list[str]:
        _get_record(uuid, "workflow", who[1])
        return service.manager.logs(uuid, "stderr", who[1])

    # -- experiments -----------------------------------------------------------

    @app.get("/reproducibility/experiments")
    async def list_experiments(who: tuple[str, str] = auth) -> list[dict[str, Any]]:
        return service.experiments.list_experiments(who[0])

    @app.post("/reproducibility/experiments")
    async def create_experiment(request: Request, who: tuple[str, str] = auth) -> JSONResponse:
        body = await _read_json(request)
        if not isinstance(body, dict) or not isinstance(body.get("name"), str):
            raise ParseError("body", "expected an object with a 'name' string")
        experiment = service.experiments.create_experiment(
            owner=who[0],
            name=body["name"],
            context=who[1],
            description=body.get("description"),
            participants=body.get("participants"),
        )
        return JSONResponse(status_code=201, content=experiment.to_dict())

    @app.get("/reproducibility/experiments/{username}/{name}")
    async def get_experiment(
        username: str, name: str, who: tuple[str, str] = auth
    ) -> dict[str, Any]:
        return service.experiments.get_experiment(who[0], username, name)

    @app.patch("/reproducibility/experiments/{username}/{name}")
    async def update_experiment(
        username: str, name: str, request: Request, who: tuple[str, str] = auth
    ) -> dict[str, Any]:
        patch = await _read_json(request)
        if not isinstance(patch, dict):
            raise ParseError("body", "expected an object")
        return service.experiments.update_experiment(who[0], username, name, patch).to_dict()

    @app.delete("/reproducibility/experiments/{username}/{name}")
    async def delete_experiment(
        username: str, name: str, who: tuple[str, str] = auth
    ) -> dict[str, Any]:
        service.experiments.delete_experiment(who[0], username, name)
        return {"deleted": f"{username}/{name}"}

    @app.get("/reproducibility/experiments/{username}/{name}/tasks")
    async def experiment_tasks(
        username: str, name: str, who: tuple[str, str] = auth
    ) -> list[dict[str, Any]]:
        detail = service.experiments.get_experiment(who[0], username, name)
        return [
            service.manager.load(uuid).summary() for uuid in sorted(detail["task_refs"])
        ]

    @app.put("/reproducibility/experiments/{username}/{name}/tasks")
    async def assign_tasks(
        username: str, name: str, request: Request, who: tuple[str, str] = auth
    ) -> dict[str, Any]:
        body = await _read_json(request)
        uuids = body.get("task_uuids") if isinstance(body, dict) else body
        if not isinstance(uuids, list) or not all(isinstance(u, str) for u in uuids):
            raise ParseError("body", "expected a list of execution uuids")
        return service.experiments.assign_tasks(who[0], username, name, uuids).to_dict()

    # -- storage -----------------------------------------------------------------

    @app.get("/storage/files")
    async def list_files(request: Request, who: tuple[str, str] = auth) -> dict[str, Any]:
        prefix = request.query_params.get("prefix", "")
        objects = service.files.list_objects(who[0], prefix)
        return {"items": [o.to_dict() for o in objects]}

    @app.post("/storage/files")
    async def issue_upload(request: Request, who: tuple[str, str] = auth) -> JSONResponse:
        body = await _read_json(request)
        if not isinstance(body, dict) or not isinstance(body.get("key"), str):
            raise ParseError("body", "expected an object with a 'key' string")
        link = service.files.issue_upload_link(who[0], body["key"])
        return JSONResponse(status_code=201, content=link.to_dict())

    @app.get("/storage/files/{key:path}")
    async def file_metadata(key: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        link, meta = service.files.issue_download_link(who[0], key)
        return {"object": meta.to_dict(), "download": link.to_dict()}

    @app.patch("/storage/files/{key:path}")
    async def move_file(key: str, request: Request, who: tuple[str, str] = auth) -> dict[str, Any]:
        body = await _read_json(request)
        if not isinstance(body, dict) or not isinstance(body.get("to_key"), str):
            raise ParseError("body", "expected an object with a 'to_key' string")
        moved = service.files.move_object(
            who[0], key, body["to_key"], overwrite=bool(body.get("overwrite", False))
        )
        return moved.to_dict()

    @app.delete("/storage/files/{key:path}")
    async def delete_file(key: str, who: tuple[str, str] = auth) -> dict[str, Any]:
        service.files.delete_object(who[0], key)
        return {"deleted": key}

    # -- signed links (local storage driver only) ----------------------------------

    @app.get("/storage/signed/{token}")
    async def signed_download(token: str) -> Response:
        driver = service.files.driver
        if not isinstance(driver, LocalDriver):
            raise NotFound("signed links are served by the object store")
        bucket, key, method = driver.verify_token(token)
        if method != "download":
            raise LinkInvalid("this link only permits uploads")
        return Response(content=driver.read(bucket, key), media_type="application/octet-stream")

    @app.put("/storage/signed/{token}")
    async def signed_upload(token: str, request: Request) -> dict[str, Any]:
        driver = service.files.driver
        if not isinstance(driver, LocalDriver):
            raise NotFound("signed links are served by the object store")
        bucket, key, method = driver.verify_token(token)
        if method != "upload":
            raise LinkInvalid("this link only permits downloads")
        return driver.write(bucket, key, await request.body()).to_dict()

    @app.get("/health")
    async def health() -> dict[str, str]:
        return {"status": "ok"}

    # -- error envelopes -------------------------------------------------------------

    @app.exception_handler(_Unauthorized)
    async def unauthorized_handler(request: Request, exc: "_Unauthorized") -> JSONResponse:
        return error_envelope(401, "unauthorized", str(exc))

    @app.exception_handler(TasklabError)
    async def tasklab_error_handler(request: Request, exc: TasklabError) -> JSONResponse:
        return _envelope_for(exc)

    @app.exception_handler(ParseError)
    async def parse_error_handler(request: Request, exc: ParseError) -> JSONResponse:
        return error_envelope(400, "parse_error", str(exc), details=[str(exc)])

    @app.exception_handler(IllegalTransition)
    async def illegal_transition_handler(request: Request, exc: IllegalTransition) -> JSONResponse:
        return error_envelope(409, "illegal_transition", str(exc))

    @app.exception_handler(StaleWrite)
    async def stale_write_handler(request: Request, exc: StaleWrite) -> JSONResponse:
        return error_envelope(409, "stale_write", str(exc))

    @app.exception_handler(StarletteHTTPException)
    async def http_exception_handler(
        request: Request, exc: StarletteHTTPException
    ) -> JSONResponse:
        code = {404: "not_found", 405: "method_not_allowed"}.get(exc.status_code, "http_error")
        return error_envelope(exc.status_code, code, str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def request_validation_handler(
        request: Request, exc: RequestValidationError
    ) -> JSONResponse:
        return error_envelope(400, "invalid_request", "request validation failed")

    return app


class _Unauthorized(Exception):
    pass
