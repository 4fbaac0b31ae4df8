"""In-memory TES server for integration tests.

Stores created tasks and advances QUEUED -> RUNNING -> COMPLETE on a
configurable timer (state is derived from elapsed wall time, so no background
thread is needed). Fault-injection switches cover the error paths: rejecting
submissions, failing tasks with SYSTEM_ERROR, and dropping connections
mid-request.
"""
from __future__ import annotations

import json
import threading
import time
import uuid as uuidlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional

_PREFIX = "/ga4gh/tes/v1/tasks"


class _TaskEntry:
    def __init__(self, document: dict[str, Any], created: float):
        self.document = document
        self.created = created
        self.canceled_at: Optional[float] = None


class MockTesServer:
    """TES wire surface: create task, get task (FULL view), cancel task."""

    def __init__(self, queued_seconds: float = 0.0, running_seconds: float = 0.05):
        self.queued_seconds = queued_seconds
        self.running_seconds = running_seconds
        self.reject_submissions = False
        self.fail_with_system_error = False
        self.drop_connections = False
        self._tasks: dict[str, _TaskEntry] = {}
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler_class())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "MockTesServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockTesServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    # -- task model -----------------------------------------------------------

    def create_task(self, document: dict[str, Any]) -> str:
        task_id = "tes-" + uuidlib.uuid4().hex[:12]
        with self._lock:
            self._tasks[task_id] = _TaskEntry(document, time.monotonic())
        return task_id

    def task_ids(self) -> list[str]:
        with self._lock:
            return list(self._tasks)

    def _entry(self, task_id: str) -> Optional[_TaskEntry]:
        with self._lock:
            return self._tasks.get(task_id)

    def _state_of(self, entry: _TaskEntry) -> str:
        elapsed = time.monotonic() - entry.created
        if entry.canceled_at is not None:
            return "CANCELED"
        if elapsed < self.queued_seconds:
            return "QUEUED"
        if self.fail_with_system_error:
            return "SYSTEM_ERROR"
        if elapsed < self.queued_seconds + self.running_seconds:
            return "RUNNING"
        return "COMPLETE"

    def cancel_task(self, task_id: str) -> bool:
        entry = self._entry(task_id)
        if entry is None:
            return False
        with self._lock:
            if self._state_of(entry) in ("COMPLETE", "EXECUTOR_ERROR", "SYSTEM_ERROR"):
                return True  # terminal already; cancel is a no-op
            entry.canceled_at = time.monotonic()
        return True

    def render_task(self, task_id: str) -> Optional[dict[str, Any]]:
        entry = self._entry(task_id)
        if entry is None:
            return None
        state = self._state_of(entry)
        document = dict(entry.document)
        document["id"] = task_id
        document["state"] = state
        if state in ("COMPLETE", "SYSTEM_ERROR", "EXECUTOR_ERROR", "CANCELED"):
            exit_code = 0 if state == "COMPLETE" else 1
            executor_logs = [
                {"stdout": "", "stderr": "", "exit_code": exit_code}
                for _ in entry.document.get("executors", [])
            ]
            document["logs"] = [
                {"logs": executor_logs, "system_logs": ["simulated failure"] if state == "SYSTEM_ERROR" else []}
            ]
        else:
            document["logs"] = []
        return document

    # -- http plumbing ----------------------------------------------------------

    def _handler_class(self) -> type[BaseHTTPRequestHandler]:
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args: Any) -> None:
                pass

            def _reply(self, status: int, payload: dict[str, Any]) -> None:
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _drop(self) -> bool:
                if server.drop_connections:
                    self.connection.close()
                    return True
                return False

            def do_POST(self) -> None:
                if self._drop():
                    return
                path = self.path.split("?")[0]
                if path == _PREFIX:
                    if server.reject_submissions:
                        self._reply(400, {"error": "submissions are disabled"})
                        return
                    length = int(self.headers.get("Content-Length", 0))
                    try:
                        document = json.loads(self.rfile.read(length) or b"{}")
                    except json.JSONDecodeError:
                        self._reply(400, {"error": "invalid JSON"})
                        return
                    self._reply(200, {"id": server.create_task(document)})
                    return
                if path.startswith(_PREFIX + "/") and path.endswith(":cancel"):
                    task_id = path[len(_PREFIX) + 1 : -len(":cancel")]
                    if server.cancel_task(task_id):
                        self._reply(200, {})
                    else:
                        self._reply(404, {"error": f"task {task_id} not found"})
                    return
                self._reply(404, {"error": "unknown route"})

            def do_GET(self) -> None:
                if self._drop():
                    return
                path = self.path.split("?")[0]
                if path.startswith(_PREFIX + "/"):
                    task_id = path[len(_PREFIX) + 1 :]
                    document = server.render_task(task_id)
                    if document is None:
                        self._reply(404, {"error": f"task {task_id} not found"})
                    else:
                        self._reply(200, document)
                    return
                self._reply(404, {"error": "unknown route"})

        return Handler
