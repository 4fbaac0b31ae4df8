from __future__ import annotations

import threading
from typing import Any, Optional

import pytest
from fastapi.testclient import TestClient

from tasklab.api import create_app
from tasklab.backends.base import (
    CANCELED,
    COMPLETE,
    QUEUED,
    RUNNING,
    TERMINAL_JOB_STATES,
    BackendJob,
    BackendJobSpec,
    ExecutionBackend,
    UnknownHandle,
)
from tasklab.config import Config
from tasklab.domain import Executor, MountPoint, Resources, Task, Volume
from tasklab.service import Service, build_service


def make_task(
    command: tuple[str, ...] = ("echo", "hi"),
    *,
    name: str | None = None,
    executors: Optional[list[Executor]] = None,
    inputs: tuple[MountPoint, ...] = (),
    outputs: tuple[MountPoint, ...] = (),
    volumes: tuple[Volume, ...] = (),
    resources: Resources = Resources(cpu_cores=1, ram_gb=0.5, disk_gb=0.5),
) -> Task:
    if executors is None:
        executors = [Executor(image="alpine", command=tuple(command))]
    return Task(
        name=name,
        executors=tuple(executors),
        inputs=inputs,
        outputs=outputs,
        volumes=volumes,
        resources=resources,
    )


class StubBackend(ExecutionBackend):
    """Scriptable backend: tests flip job states by hand."""

    def __init__(self, fail_submission: Exception | None = None):
        self.jobs: dict[str, BackendJob] = {}
        self.specs: dict[str, BackendJobSpec] = {}
        self.cancel_calls: list[str] = []
        self.fail_submission = fail_submission
        self._lock = threading.Lock()
        self._counter = 0

    def submit(self, spec: BackendJobSpec) -> str:
        if self.fail_submission is not None:
            raise self.fail_submission
        with self._lock:
            self._counter += 1
            handle = f"stub-{self._counter}"
        self.jobs[handle] = BackendJob(handle=handle, state=QUEUED)
        self.specs[handle] = spec
        return handle

    def poll(self, handle: str) -> BackendJob:
        if handle not in self.jobs:
            raise UnknownHandle(handle)
        return self.jobs[handle]

    def cancel(self, handle: str) -> bool:
        if handle not in self.jobs:
            raise UnknownHandle(handle)
        self.cancel_calls.append(handle)
        job = self.jobs[handle]
        if job.state in TERMINAL_JOB_STATES:
            return False
        job.state = CANCELED
        return True

    # test helpers

    def set_state(self, handle: str, state: str, **fields: Any) -> None:
        job = self.jobs[handle]
        job.state = state
        for key, value in fields.items():
            setattr(job, key, value)

    def finish(self, handle: str, stdout: list[str] | None = None) -> None:
        spec = self.specs[handle]
        count = len(spec.executors)
        self.set_state(
            self.jobs[handle].handle,
            COMPLETE,
            stdout=stdout or [""] * count,
            stderr=[""] * count,
            exit_codes=[0] * count,
        )

    def start(self, handle: str) -> None:
        self.set_state(handle, RUNNING)


def seed_defaults(service: Service) -> None:
    service.seed_context("ctx-a", ["alice", "bob"])
    service.seed_context("ctx-b", ["carol", "bob"])
    service.seed_api_key("key-alice", "alice", "ctx-a")
    service.seed_api_key("key-bob", "bob", "ctx-a")
    service.seed_api_key("key-carol", "carol", "ctx-b")
    service.seed_api_key("key-dead", "alice", "ctx-a", active=False)


@pytest.fixture
def service(tmp_path) -> Service:
    """Full local service (sqlite file, local driver + backend), no reconcile loop."""
    config = Config(data_dir=tmp_path / "data", reconcile_interval=0.1)
    svc = build_service(config)
    seed_defaults(svc)
    svc.manager.recover()
    yield svc
    svc.stop()


@pytest.fixture
def client(service) -> TestClient:
    app = create_app(service)
    with TestClient(app, raise_server_exceptions=False) as test_client:
        yield test_client


def auth(token: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}


class LiveServer:
    """The full service behind a real uvicorn instance on an ephemeral port."""

    def __init__(self, service: Service):
        import uvicorn

        self.service = service
        app = create_app(service)
        self._uv = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        )
        self._thread = threading.Thread(target=self._uv.run, daemon=True)

    def start(self) -> "LiveServer":
        import time

        self.service.start()  # recovery + reconcile loop
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._uv.started:
            if time.monotonic() > deadline:
                raise RuntimeError("uvicorn did not start")
            time.sleep(0.02)
        return self

    @property
    def url(self) -> str:
        sock = self._uv.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._uv.should_exit = True
        self._thread.join(timeout=10)


@pytest.fixture
def live(tmp_path) -> LiveServer:
    config = Config(data_dir=tmp_path / "live-data", reconcile_interval=0.1)
    svc = build_service(config)
    seed_defaults(svc)
    server = LiveServer(svc).start()
    yield server
    server.stop()
    svc.stop()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" not in str(getattr(report, "nodeid", "")):
                continue
            name = report.nodeid.split("::")[-1]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, verdict in lines:
            terminalreporter.write_line(f"{verdict}  {name}")
