"""Local sandbox backend: runs executor commands in per-job workspace directories.

The container image is recorded metadata only; commands execute directly on
the host inside a fresh workspace, which keeps the whole system testable with
no container runtime. Container-absolute paths (declared volumes, mount paths,
workdirs) are emulated by rewriting their occurrences in argv onto the job's
volumes directory, so commands like ``sh -c "echo hi > /data/out"`` land
inside the sandbox.

Filesystem layout per job:
    <root>/<handle>/volumes/...               (unless a shared volumes_dir is given)
    <root>/<handle>/logs/executor-<i>.out|.err
"""
from __future__ import annotations

import os
import re
import subprocess
import threading
import uuid as uuidlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from ..domain import container_to_host
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

_BOUNDARY = r'(?=$|[/\s"\'=:;,])'


class _Job:
    def __init__(self, spec: BackendJobSpec, job_dir: Path, volumes_root: Path):
        self.spec = spec
        self.dir = job_dir
        self.volumes_root = volumes_root
        self.state = QUEUED
        self.exit_codes: list[Optional[int]] = [None] * len(spec.executors)
        self.error: Optional[str] = None
        self.cancel_requested = threading.Event()
        self.process: Optional[subprocess.Popen] = None
        self.lock = threading.Lock()

    def log_path(self, index: int, channel: str) -> Path:
        ext = "out" if channel == "stdout" else "err"
        return self.dir / "logs" / f"executor-{index}.{ext}"


def _rewrite_paths(command: tuple[str, ...], roots: list[str], volumes_root: Path) -> list[str]:
    """Substitute container paths with their host equivalents inside argv tokens.

    Single combined pattern, one pass per token: replacements are never
    rescanned, so a host path containing a declared root is left alone.
    """
    ordered = sorted(set(roots), key=len, reverse=True)
    if not ordered:
        return list(command)
    pattern = re.compile("(" + "|".join(re.escape(root) for root in ordered) + ")" + _BOUNDARY)

    def to_host(match: re.Match) -> str:
        return str(container_to_host(volumes_root, match.group(1)))

    return [pattern.sub(to_host, token) for token in command]


def container_argv(
    engine: str, executor, volumes: tuple[str, ...], volumes_root: Path
) -> list[str]:
    """Invocation for a configured container engine (docker/podman-compatible).

    Volumes bind-mount from the job workspace so container paths stay real; the
    image then matters and argv rewriting does not apply.
    """
    argv = [engine, "run", "--rm"]
    for volume in volumes:
        argv += ["-v", f"{container_to_host(volumes_root, volume)}:{volume}"]
    for name, value in executor.env.items():
        argv += ["-e", f"{name}={value}"]
    if executor.workdir:
        argv += ["-w", executor.workdir]
    argv.append(executor.image)
    argv.extend(executor.command)
    return argv


class LocalBackend(ExecutionBackend):
    """Desk-scale execution: background workers, bounded concurrency, capacity gate."""

    def __init__(
        self,
        root: Path,
        max_workers: int = 4,
        capacity: Optional[int] = None,
        container_engine: Optional[str] = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.capacity = capacity
        self.container_engine = container_engine
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="localjob")
        self._jobs: dict[str, _Job] = {}
        self._lock = threading.Lock()

    def submit(self, spec: BackendJobSpec) -> str:
        handle = "local-" + uuidlib.uuid4().hex[:12]
        job_dir = self.root / handle
        volumes_root = spec.volumes_dir or (job_dir / "volumes")
        with self._lock:
            if self.capacity is not None:
                active = sum(1 for j in self._jobs.values() if j.state not in TERMINAL_JOB_STATES)
                if active >= self.capacity:
                    raise SubmissionRejected(
                        f"backend at capacity ({self.capacity} active jobs)"
                    )
            (job_dir / "logs").mkdir(parents=True)
            volumes_root.mkdir(parents=True, exist_ok=True)
            job = _Job(spec, job_dir, volumes_root)
            self._jobs[handle] = job
        self._pool.submit(self._run, job)
        return handle

    def _job(self, handle: str) -> _Job:
        with self._lock:
            job = self._jobs.get(handle)
        if job is None:
            raise UnknownHandle(f"no such job '{handle}'")
        return job

    def _run(self, job: _Job) -> None:
        with job.lock:
            if job.state != QUEUED:  # canceled while waiting for a worker
                return
            job.state = RUNNING
        spec = job.spec
        roots = list(spec.volumes)
        roots += [m.path for m in spec.inputs] + [m.path for m in spec.outputs]
        roots += [e.workdir for e in spec.executors if e.workdir]
        for volume in spec.volumes:
            container_to_host(job.volumes_root, volume).mkdir(parents=True, exist_ok=True)

        for index, executor in enumerate(spec.executors):
            if job.cancel_requested.is_set():
                self._finish(job, CANCELED)
                return
            if self.container_engine:
                argv = container_argv(
                    self.container_engine, executor, spec.volumes, job.volumes_root
                )
                cwd = job.volumes_root
            else:
                argv = _rewrite_paths(executor.command, roots, job.volumes_root)
                cwd = (
                    container_to_host(job.volumes_root, executor.workdir)
                    if executor.workdir
                    else job.volumes_root
                )
            cwd.mkdir(parents=True, exist_ok=True)
            env = {
                "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
                "HOME": str(job.dir),
                **executor.env,
            }
            try:
                with open(job.log_path(index, "stdout"), "wb") as out, open(
                    job.log_path(index, "stderr"), "wb"
                ) as err:
                    process = subprocess.Popen(
                        argv, cwd=str(cwd), env=env, stdout=out, stderr=err
                    )
                    with job.lock:
                        if job.cancel_requested.is_set():
                            process.kill()
                        job.process = process
                    returncode = process.wait()
            except Exception as exc:  # unlaunchable command, OS-level failure
                job.exit_codes[index] = None
                job.error = f"executor {index} could not run: {exc}"
                self._finish(job, SYSTEM_ERROR)
                return
            finally:
                with job.lock:
                    job.process = None
            job.exit_codes[index] = returncode
            if job.cancel_requested.is_set():
                self._finish(job, CANCELED)
                return
            if returncode != 0:
                job.error = f"executor {index} exited with code {returncode}"
                self._finish(job, EXECUTOR_ERROR)
                return
        self._finish(job, COMPLETE)

    def _finish(self, job: _Job, state: str) -> None:
        with job.lock:
            if job.state not in TERMINAL_JOB_STATES:  # terminal states never revert
                job.state = state

    def poll(self, handle: str) -> BackendJob:
        job = self._job(handle)
        with job.lock:
            state = job.state
            exit_codes = list(job.exit_codes)
            error = job.error
        stdout, stderr = [], []
        for index in range(len(job.spec.executors)):
            for channel, into in (("stdout", stdout), ("stderr", stderr)):
                path = job.log_path(index, channel)
                into.append(path.read_text(errors="replace") if path.exists() else "")
        return BackendJob(
            handle=handle,
            state=state,
            stdout=stdout,
            stderr=stderr,
            exit_codes=exit_codes,
            error=error,
        )

    def cancel(self, handle: str) -> bool:
        job = self._job(handle)
        with job.lock:
            if job.state in TERMINAL_JOB_STATES:
                return False
            job.cancel_requested.set()
            if job.state == QUEUED:  # not picked up yet; cancel immediately
                job.state = CANCELED
            elif job.process is not None:
                job.process.kill()
        return True

    def shutdown(self) -> None:
        with self._lock:
            handles = list(self._jobs)
        for handle in handles:
            try:
                self.cancel(handle)
            except UnknownHandle:
                pass
        self._pool.shutdown(wait=True, cancel_futures=True)
