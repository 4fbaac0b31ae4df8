"""Client for TES-compatible execution services (create / get / cancel task).

Targets the minimal TES surface with bearer-token auth; task documents mirror
the TES JSON shape so any conforming server can run them.
"""
from __future__ import annotations

from typing import Any, Optional

import httpx

from ..domain import Task, Volume
from ..errors import BackendUnavailable
from .base import (
    CANCELED,
    COMPLETE,
    EXECUTOR_ERROR,
    QUEUED,
    RUNNING,
    SYSTEM_ERROR,
    TERMINAL_JOB_STATES,
    BackendJob,
    BackendJobSpec,
    ExecutionBackend,
    SubmissionRejected,
    UnknownHandle,
)

# Wire states a TES server may report, folded onto the backend vocabulary.
_TES_STATE_MAP = {
    "UNKNOWN": QUEUED,
    "QUEUED": QUEUED,
    "INITIALIZING": QUEUED,
    "RUNNING": RUNNING,
    "PAUSED": RUNNING,
    "COMPLETE": COMPLETE,
    "EXECUTOR_ERROR": EXECUTOR_ERROR,
    "SYSTEM_ERROR": SYSTEM_ERROR,
    "CANCELED": CANCELED,
    "CANCELING": RUNNING,
}


def tes_serialize(task: Task) -> dict[str, Any]:
    """Emit the TES task document for a validated task; lossless on all mapped fields."""
    executors = []
    for executor in task.executors:
        doc: dict[str, Any] = {
            "image": executor.image,
            "command": list(executor.command),
            "env": dict(executor.env),
        }
        if executor.workdir is not None:
            doc["workdir"] = executor.workdir
        executors.append(doc)
    document: dict[str, Any] = {
        "name": task.name or "",
        "executors": executors,
        "inputs": [{"url": m.url, "path": m.path, "type": "FILE"} for m in task.inputs],
        "outputs": [{"url": m.url, "path": m.path, "type": "FILE"} for m in task.outputs],
        "volumes": [v.path for v in task.volumes],
        "resources": {
            "cpu_cores": task.resources.cpu_cores,
            "ram_gb": task.resources.ram_gb,
            "disk_gb": task.resources.disk_gb,
        },
    }
    return document


def _spec_to_task(spec: BackendJobSpec) -> Task:
    return Task(
        name=spec.name or None,
        executors=spec.executors,
        inputs=spec.inputs,
        outputs=spec.outputs,
        volumes=tuple(Volume(path=p) for p in spec.volumes),
        resources=spec.resources,
    )


class TesBackend(ExecutionBackend):
    def __init__(
        self,
        base_url: str,
        token: Optional[str] = None,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = client or httpx.Client(timeout=30.0, headers=headers)

    def _tasks_url(self, suffix: str = "") -> str:
        return f"{self.base_url}/ga4gh/tes/v1/tasks{suffix}"

    def submit(self, spec: BackendJobSpec) -> str:
        document = tes_serialize(_spec_to_task(spec))
        try:
            response = self._client.post(self._tasks_url(), json=document)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"TES unreachable: {exc}") from exc
        if 400 <= response.status_code < 500:
            raise SubmissionRejected(f"TES rejected the task: {response.text}")
        if response.status_code >= 500:
            raise BackendUnavailable(f"TES error {response.status_code}: {response.text}")
        return response.json()["id"]

    def poll(self, handle: str) -> BackendJob:
        try:
            response = self._client.get(self._tasks_url(f"/{handle}"), params={"view": "FULL"})
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"TES unreachable: {exc}") from exc
        if response.status_code == 404:
            raise UnknownHandle(f"TES does not know task '{handle}'")
        if response.status_code >= 500:
            raise BackendUnavailable(f"TES error {response.status_code}")
        document = response.json()
        state = _TES_STATE_MAP.get(document.get("state", "UNKNOWN"), QUEUED)
        stdout: list[str] = []
        stderr: list[str] = []
        exit_codes: list[Optional[int]] = []
        attempts = document.get("logs") or []
        if attempts:
            for executor_log in attempts[-1].get("logs") or []:
                stdout.append(executor_log.get("stdout") or "")
                stderr.append(executor_log.get("stderr") or "")
                exit_codes.append(executor_log.get("exit_code"))
        error = None
        if state in (EXECUTOR_ERROR, SYSTEM_ERROR):
            error = (attempts[-1].get("system_logs") or [None])[0] if attempts else None
            error = error or f"TES reported {document.get('state')}"
        return BackendJob(
            handle=handle,
            state=state,
            stdout=stdout,
            stderr=stderr,
            exit_codes=exit_codes,
            error=error,
        )

    def cancel(self, handle: str) -> bool:
        current = self.poll(handle)
        if current.state in TERMINAL_JOB_STATES:
            return False
        try:
            response = self._client.post(self._tasks_url(f"/{handle}:cancel"))
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"TES unreachable: {exc}") from exc
        if response.status_code == 404:
            raise UnknownHandle(f"TES does not know task '{handle}'")
        return response.status_code < 400
