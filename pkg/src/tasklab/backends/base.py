"""Common execution-backend contract shared by the local sandbox and TES client."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..domain import Executor, ExecutionStatus, MountPoint, Resources
from ..errors import TasklabError

# Backend job states follow the TES task-state vocabulary.
QUEUED = "QUEUED"
RUNNING = "RUNNING"
COMPLETE = "COMPLETE"
EXECUTOR_ERROR = "EXECUTOR_ERROR"
SYSTEM_ERROR = "SYSTEM_ERROR"
CANCELED = "CANCELED"

TERMINAL_JOB_STATES = frozenset({COMPLETE, EXECUTOR_ERROR, SYSTEM_ERROR, CANCELED})

_STATE_TO_STATUS = {
    QUEUED: ExecutionStatus.SCHEDULED,
    RUNNING: ExecutionStatus.RUNNING,
    COMPLETE: ExecutionStatus.COMPLETED,
    EXECUTOR_ERROR: ExecutionStatus.ERROR,
    SYSTEM_ERROR: ExecutionStatus.ERROR,
    CANCELED: ExecutionStatus.CANCELED,
}


def job_state_to_status(state: str) -> ExecutionStatus:
    """Total mapping from backend job states into execution statuses."""
    return _STATE_TO_STATUS[state]


class SubmissionRejected(TasklabError):
    code = "submission_rejected"


class UnknownHandle(TasklabError):
    code = "unknown_handle"


@dataclass(frozen=True)
class BackendJobSpec:
    """One schedulable backend job: ordered executors plus its workspace shape.

    volumes_dir, when set, points at an existing host directory the job must
    use as its volumes root (how workflow stages share data); otherwise the
    backend materializes a fresh one.
    """

    executors: tuple[Executor, ...]
    inputs: tuple[MountPoint, ...] = ()
    outputs: tuple[MountPoint, ...] = ()
    volumes: tuple[str, ...] = ()
    resources: Resources = field(default_factory=Resources)
    name: str = ""
    volumes_dir: Optional[Path] = None


@dataclass
class BackendJob:
    """Point-in-time view of a backend job."""

    handle: str
    state: str
    stdout: list[str] = field(default_factory=list)
    stderr: list[str] = field(default_factory=list)
    exit_codes: list[Optional[int]] = field(default_factory=list)
    error: Optional[str] = None


class ExecutionBackend(ABC):
    @abstractmethod
    def submit(self, spec: BackendJobSpec) -> str:
        """Queue the job and return its opaque handle."""

    @abstractmethod
    def poll(self, handle: str) -> BackendJob:
        """Current state, plus logs and exit codes once available."""

    @abstractmethod
    def cancel(self, handle: str) -> bool:
        """Best-effort termination; False when the job already finished."""
