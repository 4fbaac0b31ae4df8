"""Native workflow documents: parsing plus dependency-driven execution ordering.

A workflow is the task structure extended with per-executor ``id``, ``reads``
and ``writes`` path lists. Executor B depends on executor A iff B reads a path
A writes; read-read sharing creates no edge. The induced graph must be acyclic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .domain import (
    Executor,
    MountPoint,
    ParseError,
    Resources,
    Task,
    Volume,
    is_normalized_abspath,
    parse_executor,
    parse_mount,
    parse_resources,
    parse_volume,
    path_is_under,
    validate_task,
)

_TOP_LEVEL_FIELDS = {"name", "executors", "inputs", "outputs", "volumes", "resources"}


class CycleError(Exception):
    """The dependency graph is cyclic; carries the executor ids of one cycle."""

    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class UnsatisfiedRead(Exception):
    """An executor reads a path that no executor writes and no input mount provides."""

    def __init__(self, executor_id: str, path: str):
        super().__init__(f"executor '{executor_id}' reads '{path}' which nothing provides")
        self.executor_id = executor_id
        self.path = path


@dataclass(frozen=True)
class WorkflowExecutor:
    """Executor plus the file-dependency declarations that induce execution order."""

    id: str
    image: str
    command: tuple[str, ...]
    env: dict[str, str] = field(default_factory=dict)
    workdir: Optional[str] = None
    reads: tuple[str, ...] = ()
    writes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "image": self.image,
            "command": list(self.command),
            "env": dict(self.env),
            "reads": list(self.reads),
            "writes": list(self.writes),
        }
        if self.workdir is not None:
            doc["workdir"] = self.workdir
        return doc

    def as_executor(self) -> Executor:
        return Executor(image=self.image, command=self.command, env=self.env, workdir=self.workdir)


@dataclass(frozen=True)
class WorkflowSpec:
    """A multi-job definition whose file dependencies induce execution order."""

    executors: tuple[WorkflowExecutor, ...]
    name: Optional[str] = None
    inputs: tuple[MountPoint, ...] = ()
    outputs: tuple[MountPoint, ...] = ()
    volumes: tuple[Volume, ...] = ()
    resources: Resources = field(default_factory=Resources)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "executors": [e.to_dict() for e in self.executors],
            "inputs": [m.to_dict() for m in self.inputs],
            "outputs": [m.to_dict() for m in self.outputs],
            "volumes": [v.to_dict() for v in self.volumes],
            "resources": self.resources.to_dict(),
        }

    def executor_by_id(self, executor_id: str) -> WorkflowExecutor:
        for executor in self.executors:
            if executor.id == executor_id:
                return executor
        raise KeyError(executor_id)


@dataclass(frozen=True)
class ExecutionPlan:
    """Staged execution order: members of one stage may run concurrently."""

    stages: tuple[tuple[str, ...], ...]

    def to_dict(self) -> list[list[str]]:
        return [list(stage) for stage in self.stages]

    def linearization(self) -> list[str]:
        return [executor_id for stage in self.stages for executor_id in stage]

    def stage_of(self, executor_id: str) -> int:
        for index, stage in enumerate(self.stages):
            if executor_id in stage:
                return index
        raise KeyError(executor_id)


def _parse_workflow_executor(doc: Any, location: str) -> WorkflowExecutor:
    if not isinstance(doc, dict):
        raise ParseError(location, "expected an object")
    executor_id = doc.get("id")
    if not isinstance(executor_id, str):
        raise ParseError(f"{location}.id", "expected string")
    for key in ("reads", "writes"):
        if key in doc and (
            not isinstance(doc[key], list) or not all(isinstance(p, str) for p in doc[key])
        ):
            raise ParseError(f"{location}.{key}", "expected a list of path strings")
    base = dict(doc)
    base.pop("id", None)
    reads = tuple(base.pop("reads", []))
    writes = tuple(base.pop("writes", []))
    executor = parse_executor(base, location)
    return WorkflowExecutor(
        id=executor_id,
        image=executor.image,
        command=executor.command,
        env=executor.env,
        workdir=executor.workdir,
        reads=reads,
        writes=writes,
    )


def parse_workflow(document: str | dict[str, Any]) -> WorkflowSpec:
    """Parse a native workflow JSON document.

    Checks every invariant except acyclicity (resolve_order's job). Unknown
    top-level fields are rejected.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError("document", f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ParseError("document", "expected a JSON object")
    unknown = set(doc) - _TOP_LEVEL_FIELDS
    if unknown:
        raise ParseError("document", f"unknown fields: {', '.join(sorted(unknown))}")

    name = doc.get("name")
    if name is not None and not isinstance(name, str):
        raise ParseError("document.name", "expected string")
    executors_doc = doc.get("executors")
    if not isinstance(executors_doc, list) or len(executors_doc) == 0:
        raise ParseError("document.executors", "expected a non-empty list")
    executors = tuple(
        _parse_workflow_executor(e, f"executors[{i}]") for i, e in enumerate(executors_doc)
    )
    inputs = tuple(
        parse_mount(m, "input", f"inputs[{i}]") for i, m in enumerate(doc.get("inputs", []))
    )
    outputs = tuple(
        parse_mount(m, "output", f"outputs[{i}]") for i, m in enumerate(doc.get("outputs", []))
    )
    volumes = tuple(
        parse_volume(v, f"volumes[{i}]") for i, v in enumerate(doc.get("volumes", []))
    )
    resources = parse_resources(doc.get("resources"), "resources")
    spec = WorkflowSpec(
        name=name,
        executors=executors,
        inputs=inputs,
        outputs=outputs,
        volumes=volumes,
        resources=resources,
    )
    problems = validate_workflow(spec)
    if problems:
        raise ParseError("document", "; ".join(problems))
    return spec


def validate_workflow(spec: WorkflowSpec) -> list[str]:
    """All WorkflowSpec/WorkflowExecutor invariants except acyclicity."""
    violations = validate_task(workflow_as_task(spec))

    seen_ids: set[str] = set()
    for i, executor in enumerate(spec.executors):
        if not executor.id:
            violations.append(f"executors[{i}].id empty")
        elif executor.id in seen_ids:
            violations.append(f"executors[{i}].id '{executor.id}' duplicated")
        seen_ids.add(executor.id)

    volume_paths = [v.path for v in spec.volumes]
    writers: dict[str, str] = {}
    for i, executor in enumerate(spec.executors):
        for kind, paths in (("reads", executor.reads), ("writes", executor.writes)):
            for path in paths:
                if not is_normalized_abspath(path):
                    violations.append(f"executors[{i}].{kind} path '{path}' not normalized")
                elif not any(path_is_under(path, vol) for vol in volume_paths):
                    violations.append(
                        f"executors[{i}].{kind} path '{path}' outside declared volumes"
                    )
        for path in executor.writes:
            if path in writers:
                violations.append(
                    f"duplicate writer for '{path}': '{writers[path]}' and '{executor.id}'"
                )
            else:
                writers[path] = executor.id

    # Every declared output must be produced by some executor or staged in.
    produced = {path for executor in spec.executors for path in executor.writes}
    staged = {mount.path for mount in spec.inputs}
    for i, mount in enumerate(spec.outputs):
        if mount.path not in produced and mount.path not in staged:
            violations.append(f"outputs[{i}].path '{mount.path}' is never written")
    return violations


def workflow_as_task(spec: WorkflowSpec) -> Task:
    """Project the workflow onto the plain task structure for shared validation."""
    return Task(
        name=spec.name,
        executors=tuple(e.as_executor() for e in spec.executors),
        inputs=spec.inputs,
        outputs=spec.outputs,
        volumes=spec.volumes,
        resources=spec.resources,
    )


def dependency_edges(spec: WorkflowSpec) -> set[tuple[str, str]]:
    """Edges (A, B) meaning B must run after A (B reads something A writes)."""
    writer_of: dict[str, str] = {}
    for executor in spec.executors:
        for path in executor.writes:
            writer_of[path] = executor.id
    edges: set[tuple[str, str]] = set()
    for executor in spec.executors:
        for path in executor.reads:
            writer = writer_of.get(path)
            if writer is not None and writer != executor.id:
                edges.add((writer, executor.id))
    return edges


def _find_cycle(ids: list[str], successors: dict[str, list[str]]) -> list[str]:
    """Return one cycle's node ids (in order) from a graph known to be cyclic."""
    state: dict[str, int] = {}  # 0 unseen, 1 on stack, 2 done
    stack: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        state[node] = 1
        stack.append(node)
        for succ in successors[node]:
            if state.get(succ, 0) == 1:
                return stack[stack.index(succ):]
            if state.get(succ, 0) == 0:
                found = visit(succ)
                if found is not None:
                    return found
        stack.pop()
        state[node] = 2
        return None

    for node in ids:
        if state.get(node, 0) == 0:
            found = visit(node)
            if found is not None:
                return found
    raise AssertionError("no cycle found in a graph reported cyclic")


def resolve_order(spec: WorkflowSpec) -> ExecutionPlan:
    """Stage the executors so every dependency edge crosses stage boundaries forward.

    Deterministic: an executor lands in stage 1 + max(stage of its
    dependencies); within a stage, ids keep declaration order.
    """
    writer_of: dict[str, str] = {}
    for executor in spec.executors:
        for path in executor.writes:
            writer_of[path] = executor.id
    staged_in = {mount.path for mount in spec.inputs}
    for executor in spec.executors:
        for path in executor.reads:
            if path not in writer_of and path not in staged_in:
                raise UnsatisfiedRead(executor.id, path)

    order = [executor.id for executor in spec.executors]
    edges = dependency_edges(spec)
    predecessors: dict[str, list[str]] = {executor_id: [] for executor_id in order}
    successors: dict[str, list[str]] = {executor_id: [] for executor_id in order}
    for src, dst in edges:
        predecessors[dst].append(src)
        successors[src].append(dst)

    level: dict[str, int] = {}
    remaining = dict.fromkeys(order)
    while remaining:
        progressed = False
        for executor_id in list(remaining):
            if all(dep in level for dep in predecessors[executor_id]):
                deps = predecessors[executor_id]
                level[executor_id] = 1 + max((level[d] for d in deps), default=-1)
                del remaining[executor_id]
                progressed = True
        if not progressed:
            raise CycleError(_find_cycle(list(remaining), successors))

    stage_count = max(level.values()) + 1 if level else 0
    stages = tuple(
        tuple(executor_id for executor_id in order if level[executor_id] == stage)
        for stage in range(stage_count)
    )
    return ExecutionPlan(stages=stages)
