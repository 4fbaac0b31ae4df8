"""Core resource types, task validation and the execution status state machine."""
from __future__ import annotations

import posixpath
import uuid as uuidlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional


def new_uuid() -> str:
    """Version-4 uuid, lowercase hyphenated. Tasks and workflows share this namespace."""
    return str(uuidlib.uuid4())


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def render_timestamp(ts: datetime) -> str:
    return ts.isoformat()


def parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


class ExecutionStatus(str, Enum):
    SUBMITTED = "SUBMITTED"
    APPROVED = "APPROVED"
    SCHEDULED = "SCHEDULED"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    ERROR = "ERROR"
    CANCELED = "CANCELED"
    REJECTED = "REJECTED"


# The full legal transition relation; terminal states have no successors.
LEGAL_TRANSITIONS: dict[ExecutionStatus, frozenset[ExecutionStatus]] = {
    ExecutionStatus.SUBMITTED: frozenset({ExecutionStatus.APPROVED, ExecutionStatus.REJECTED}),
    ExecutionStatus.APPROVED: frozenset({ExecutionStatus.SCHEDULED, ExecutionStatus.CANCELED}),
    ExecutionStatus.SCHEDULED: frozenset(
        {ExecutionStatus.RUNNING, ExecutionStatus.ERROR, ExecutionStatus.CANCELED}
    ),
    ExecutionStatus.RUNNING: frozenset(
        {ExecutionStatus.COMPLETED, ExecutionStatus.ERROR, ExecutionStatus.CANCELED}
    ),
    ExecutionStatus.COMPLETED: frozenset(),
    ExecutionStatus.ERROR: frozenset(),
    ExecutionStatus.CANCELED: frozenset(),
    ExecutionStatus.REJECTED: frozenset(),
}

TERMINAL_STATUSES = frozenset(
    {
        ExecutionStatus.COMPLETED,
        ExecutionStatus.ERROR,
        ExecutionStatus.CANCELED,
        ExecutionStatus.REJECTED,
    }
)


class IllegalTransition(Exception):
    """Raised on a status transition outside the legal relation.

    Signals either a logic bug or a stale concurrent update.
    """

    def __init__(self, current: ExecutionStatus, requested: ExecutionStatus):
        super().__init__(f"illegal status transition {current.value} -> {requested.value}")
        self.current = current
        self.requested = requested


def transition(current: ExecutionStatus, requested: ExecutionStatus) -> ExecutionStatus:
    """Return ``requested`` iff (current -> requested) is a legal transition."""
    if requested not in LEGAL_TRANSITIONS[current]:
        raise IllegalTransition(current, requested)
    return requested


class ParseError(Exception):
    """Malformed document: wrong types, missing fields, unknown fields."""

    def __init__(self, location: str, reason: str):
        super().__init__(f"{location}: {reason}")
        self.location = location
        self.reason = reason


def is_normalized_abspath(path: str) -> bool:
    """Absolute, no "..", no duplicate separators, no trailing slash (except root)."""
    if not isinstance(path, str) or not path.startswith("/"):
        return False
    return posixpath.normpath(path) == path


def _segments(path: str) -> list[str]:
    return [seg for seg in path.split("/") if seg]


def path_is_under(path: str, root: str) -> bool:
    """True when ``path`` equals ``root`` or lives below it (segment-wise)."""
    ps, rs = _segments(path), _segments(root)
    return len(ps) >= len(rs) and ps[: len(rs)] == rs


def container_to_host(root: Any, container_path: str) -> Any:
    """Map an absolute in-workspace path onto a host directory (pathlib.Path)."""
    return root.joinpath(*_segments(container_path))


@dataclass(frozen=True)
class Executor:
    """A single containerized job: image plus argv, env and optional workdir.

    stdout/stderr are implicit per-executor log channels captured by the backend.
    """

    image: str
    command: tuple[str, ...]
    env: dict[str, str] = field(default_factory=dict)
    workdir: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"image": self.image, "command": list(self.command), "env": dict(self.env)}
        if self.workdir is not None:
            doc["workdir"] = self.workdir
        return doc


@dataclass(frozen=True)
class MountPoint:
    """Maps a bucket-relative object key (url) to an absolute workspace path.

    Input mounts are staged before the first executor; output mounts are
    collected after the last executor.
    """

    url: str
    path: str
    direction: str  # "input" | "output"

    def to_dict(self) -> dict[str, Any]:
        return {"url": self.url, "path": self.path, "direction": self.direction}


@dataclass(frozen=True)
class Volume:
    """A shared workspace directory visible to all executors of an execution."""

    path: str

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path}


@dataclass(frozen=True)
class Resources:
    cpu_cores: int = 1
    ram_gb: float = 1.0
    disk_gb: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"cpu_cores": self.cpu_cores, "ram_gb": self.ram_gb, "disk_gb": self.disk_gb}


@dataclass(frozen=True)
class Task:
    """A single- or multi-executor containerized execution with mounts and volumes.

    Executors run sequentially. uuid/context_ref/submitter_ref and the
    timestamps are assigned at admission and stay None on candidate documents.
    """

    executors: tuple[Executor, ...]
    name: Optional[str] = None
    inputs: tuple[MountPoint, ...] = ()
    outputs: tuple[MountPoint, ...] = ()
    volumes: tuple[Volume, ...] = ()
    resources: Resources = field(default_factory=Resources)
    uuid: Optional[str] = None
    context_ref: Optional[str] = None
    submitter_ref: Optional[str] = None
    submitted_at: Optional[datetime] = None
    updated_at: Optional[datetime] = None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": self.name,
            "executors": [e.to_dict() for e in self.executors],
            "inputs": [m.to_dict() for m in self.inputs],
            "outputs": [m.to_dict() for m in self.outputs],
            "volumes": [v.to_dict() for v in self.volumes],
            "resources": self.resources.to_dict(),
        }
        if self.uuid is not None:
            doc["uuid"] = self.uuid
            doc["context_ref"] = self.context_ref
            doc["submitter_ref"] = self.submitter_ref
            doc["submitted_at"] = render_timestamp(self.submitted_at) if self.submitted_at else None
            doc["updated_at"] = render_timestamp(self.updated_at) if self.updated_at else None
        return doc


@dataclass(frozen=True)
class Quota:
    """Optional numeric limits over active executions; absent means unlimited."""

    max_active_executions: Optional[int] = None
    max_cpu_cores: Optional[int] = None
    max_ram_gb: Optional[float] = None
    max_disk_gb: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_active_executions": self.max_active_executions,
            "max_cpu_cores": self.max_cpu_cores,
            "max_ram_gb": self.max_ram_gb,
            "max_disk_gb": self.max_disk_gb,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Quota":
        return cls(
            max_active_executions=doc.get("max_active_executions"),
            max_cpu_cores=doc.get("max_cpu_cores"),
            max_ram_gb=doc.get("max_ram_gb"),
            max_disk_gb=doc.get("max_disk_gb"),
        )


@dataclass(frozen=True)
class Context:
    """A named group of users sharing an execution space and (optionally) a quota."""

    slug: str
    members: frozenset[str] = frozenset()

    def to_dict(self) -> dict[str, Any]:
        return {"slug": self.slug, "members": sorted(self.members)}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Context":
        return cls(slug=doc["slug"], members=frozenset(doc.get("members", [])))


@dataclass(frozen=True)
class Experiment:
    """A named grouping of terminal executions within one context.

    Identified by the (owner, name) pair; the owner is always a participant.
    """

    owner: str
    name: str
    context_ref: str
    description: Optional[str] = None
    participants: frozenset[str] = frozenset()
    task_refs: frozenset[str] = frozenset()
    created_at: Optional[datetime] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "owner": self.owner,
            "name": self.name,
            "context_ref": self.context_ref,
            "description": self.description,
            "participants": sorted(self.participants),
            "task_refs": sorted(self.task_refs),
            "created_at": render_timestamp(self.created_at) if self.created_at else None,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Experiment":
        return cls(
            owner=doc["owner"],
            name=doc["name"],
            context_ref=doc["context_ref"],
            description=doc.get("description"),
            participants=frozenset(doc.get("participants", [])),
            task_refs=frozenset(doc.get("task_refs", [])),
            created_at=parse_timestamp(doc["created_at"]) if doc.get("created_at") else None,
        )


# ---------------------------------------------------------------------------
# Document parsing (structural checks; invariant checks live in validate_task)

def _require(doc: dict[str, Any], key: str, kind: type, location: str, default: Any = ...) -> Any:
    if key not in doc:
        if default is not ...:
            return default
        raise ParseError(location, f"missing field '{key}'")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError(f"{location}.{key}", "expected a number")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ParseError(f"{location}.{key}", f"expected {kind.__name__}")
    return value


def parse_executor(doc: Any, location: str) -> Executor:
    if not isinstance(doc, dict):
        raise ParseError(location, "expected an object")
    image = _require(doc, "image", str, location)
    command = _require(doc, "command", list, location)
    if not all(isinstance(arg, str) for arg in command):
        raise ParseError(f"{location}.command", "every argument must be a string")
    env = _require(doc, "env", dict, location, default={})
    for key, value in env.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ParseError(f"{location}.env", "keys and values must be strings")
    workdir = doc.get("workdir")
    if workdir is not None and not isinstance(workdir, str):
        raise ParseError(f"{location}.workdir", "expected string")
    return Executor(image=image, command=tuple(command), env=dict(env), workdir=workdir)


def parse_mount(doc: Any, direction: str, location: str) -> MountPoint:
    if not isinstance(doc, dict):
        raise ParseError(location, "expected an object")
    url = _require(doc, "url", str, location)
    path = _require(doc, "path", str, location)
    declared = doc.get("direction", direction)
    if declared != direction:
        raise ParseError(f"{location}.direction", f"must be '{direction}' in this list")
    return MountPoint(url=url, path=path, direction=direction)


def parse_volume(doc: Any, location: str) -> Volume:
    if isinstance(doc, str):  # accept the bare-path shorthand
        return Volume(path=doc)
    if not isinstance(doc, dict):
        raise ParseError(location, "expected an object or path string")
    return Volume(path=_require(doc, "path", str, location))


def parse_resources(doc: Any, location: str) -> Resources:
    if doc is None:
        return Resources()
    if not isinstance(doc, dict):
        raise ParseError(location, "expected an object")
    return Resources(
        cpu_cores=_require(doc, "cpu_cores", int, location, default=1),
        ram_gb=_require(doc, "ram_gb", float, location, default=1.0),
        disk_gb=_require(doc, "disk_gb", float, location, default=1.0),
    )


def parse_task(doc: Any) -> Task:
    """Build a Task from a JSON document; structural problems raise ParseError."""
    if not isinstance(doc, dict):
        raise ParseError("task", "expected an object")
    name = doc.get("name")
    if name is not None and not isinstance(name, str):
        raise ParseError("task.name", "expected string")
    executors_doc = _require(doc, "executors", list, "task")
    executors = tuple(
        parse_executor(e, f"executors[{i}]") for i, e in enumerate(executors_doc)
    )
    inputs = tuple(
        parse_mount(m, "input", f"inputs[{i}]")
        for i, m in enumerate(_require(doc, "inputs", list, "task", default=[]))
    )
    outputs = tuple(
        parse_mount(m, "output", f"outputs[{i}]")
        for i, m in enumerate(_require(doc, "outputs", list, "task", default=[]))
    )
    volumes = tuple(
        parse_volume(v, f"volumes[{i}]")
        for i, v in enumerate(_require(doc, "volumes", list, "task", default=[]))
    )
    resources = parse_resources(doc.get("resources"), "resources")
    return Task(
        name=name,
        executors=executors,
        inputs=inputs,
        outputs=outputs,
        volumes=volumes,
        resources=resources,
    )


# ---------------------------------------------------------------------------
# Invariant validation

def _validate_executor(executor: Executor, location: str, violations: list[str]) -> None:
    if len(executor.command) == 0:
        violations.append(f"{location}.command empty")
    if not executor.image:
        violations.append(f"{location}.image empty")
    for key in executor.env:
        if key == "":
            violations.append(f"{location}.env has an empty variable name")
    if executor.workdir is not None and not is_normalized_abspath(executor.workdir):
        violations.append(f"{location}.workdir not an absolute normalized path")


def _validate_mounts(
    mounts: tuple[MountPoint, ...], kind: str, violations: list[str]
) -> None:
    for i, mount in enumerate(mounts):
        if not mount.url:
            violations.append(f"{kind}[{i}].url empty")
        if not mount.path.startswith("/"):
            violations.append(f"{kind}[{i}].path not absolute")
        elif not is_normalized_abspath(mount.path):
            violations.append(f"{kind}[{i}].path not normalized")


def validate_task(task: Task) -> list[str]:
    """Check every Task/Executor/MountPoint/Volume invariant.

    Returns the (possibly empty) list of violations; never raises. The task is
    well-formed iff the list is empty.
    """
    violations: list[str] = []
    if len(task.executors) == 0:
        violations.append("executors empty")
    for i, executor in enumerate(task.executors):
        _validate_executor(executor, f"executors[{i}]", violations)
    _validate_mounts(task.inputs, "inputs", violations)
    _validate_mounts(task.outputs, "outputs", violations)

    for i, volume in enumerate(task.volumes):
        if not is_normalized_abspath(volume.path):
            violations.append(f"volumes[{i}].path not an absolute normalized path")
    # Volumes must be pairwise non-nested.
    for i, a in enumerate(task.volumes):
        for j, b in enumerate(task.volumes):
            if i < j and (path_is_under(a.path, b.path) or path_is_under(b.path, a.path)):
                violations.append(f"volumes[{i}] and volumes[{j}] are nested")

    if task.resources.cpu_cores <= 0:
        violations.append("resources.cpu_cores must be positive")
    if task.resources.ram_gb <= 0:
        violations.append("resources.ram_gb must be positive")
    if task.resources.disk_gb <= 0:
        violations.append("resources.disk_gb must be positive")

    # Workspace coverage: a workdir must resolve inside the declared workspace,
    # i.e. under a volume or exactly at a declared mount path. Mount paths
    # satisfy this by construction (they are declared mount paths).
    volume_paths = [v.path for v in task.volumes]
    mount_paths = {m.path for m in task.inputs} | {m.path for m in task.outputs}
    for i, executor in enumerate(task.executors):
        if executor.workdir is not None and is_normalized_abspath(executor.workdir):
            inside = executor.workdir in mount_paths or any(
                path_is_under(executor.workdir, vol) for vol in volume_paths
            )
            if not inside:
                violations.append(f"executors[{i}].workdir outside declared volumes and mounts")
    return violations
