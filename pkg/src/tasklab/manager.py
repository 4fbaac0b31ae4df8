"""Admission and lifecycle engine for task and workflow executions.

Admission is synchronous through SCHEDULED: validate, resolve workflow order,
reserve quota, stage inputs, hand to the backend. Everything after that is
asynchronous: reconcile() sweeps non-terminal records, polls the backend,
applies legal status transitions, drives workflow stages, stores logs and
releases reservations on terminal transitions. Concurrent submit / cancel /
reconcile stay safe through compare-and-set on the persisted status; a stale
transition loses the race, is skipped, and the next sweep retries.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .backends.base import (
    TERMINAL_JOB_STATES,
    BackendJob,
    BackendJobSpec,
    ExecutionBackend,
    SubmissionRejected,
    UnknownHandle,
    job_state_to_status,
)
from .domain import (
    Context,
    ExecutionStatus,
    Task,
    TERMINAL_STATUSES,
    new_uuid,
    parse_task,
    parse_timestamp,
    render_timestamp,
    transition,
    utcnow,
    validate_task,
)
from .errors import BackendUnavailable, Forbidden, NotAMember, NotFound, ValidationFailed
from .persistence import StaleWrite, Store
from .quotas import QuotaExceeded, QuotasManager, ReservationToken, AlreadyReleased, request_amounts
from .storage import FilesAdapter, InputMissing
from .workflow import (
    CycleError,
    ExecutionPlan,
    UnsatisfiedRead,
    WorkflowSpec,
    parse_workflow,
    resolve_order,
    validate_workflow,
)

log = logging.getLogger(__name__)

Definition = Union[Task, WorkflowSpec]


@dataclass
class WorkflowJob:
    """Per-executor scheduling state of one workflow run."""

    executor_id: str
    stage: int
    handle: Optional[str] = None
    state: Optional[str] = None
    stdout: str = ""
    stderr: str = ""
    exit_code: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "executor_id": self.executor_id,
            "stage": self.stage,
            "handle": self.handle,
            "state": self.state,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "exit_code": self.exit_code,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "WorkflowJob":
        return cls(
            executor_id=doc["executor_id"],
            stage=doc["stage"],
            handle=doc.get("handle"),
            state=doc.get("state"),
            stdout=doc.get("stdout", ""),
            stderr=doc.get("stderr", ""),
            exit_code=doc.get("exit_code"),
        )


@dataclass
class ExecutionRecord:
    """The persisted lifecycle of one submission."""

    uuid: str
    kind: str  # "task" | "workflow"
    definition: Definition
    context_ref: str
    submitter_ref: str
    status: ExecutionStatus
    status_history: list[tuple[ExecutionStatus, datetime]]
    plan: Optional[ExecutionPlan] = None
    backend_handle: Optional[str] = None
    stdout: list[str] = field(default_factory=list)
    stderr: list[str] = field(default_factory=list)
    resource_snapshot: dict[str, float] = field(default_factory=dict)
    reservation_id: Optional[str] = None
    reason: Optional[str] = None
    denied_dimensions: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    jobs: list[WorkflowJob] = field(default_factory=list)
    workspace: Optional[str] = None

    @property
    def submitted_at(self) -> datetime:
        return self.status_history[0][1]

    @property
    def updated_at(self) -> datetime:
        return self.status_history[-1][1]

    @property
    def name(self) -> Optional[str]:
        return self.definition.name

    def apply(self, status: ExecutionStatus, now: datetime) -> None:
        self.status = transition(self.status, status)
        self.status_history.append((status, now))

    def executor_count(self) -> int:
        return len(self.definition.executors)

    def to_dict(self) -> dict[str, Any]:
        return {
            "uuid": self.uuid,
            "kind": self.kind,
            "name": self.name,
            "definition": self.definition.to_dict(),
            "plan": self.plan.to_dict() if self.plan else None,
            "status": self.status.value,
            "status_history": [
                {"status": status.value, "timestamp": render_timestamp(at)}
                for status, at in self.status_history
            ],
            "backend_handle": self.backend_handle,
            "stdout": list(self.stdout),
            "stderr": list(self.stderr),
            "context_ref": self.context_ref,
            "submitter_ref": self.submitter_ref,
            "resource_snapshot": dict(self.resource_snapshot),
            "reservation_id": self.reservation_id,
            "reason": self.reason,
            "denied_dimensions": list(self.denied_dimensions),
            "warnings": list(self.warnings),
            "jobs": [job.to_dict() for job in self.jobs],
            "workspace": self.workspace,
            "submitted_at": render_timestamp(self.submitted_at),
            "updated_at": render_timestamp(self.updated_at),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExecutionRecord":
        kind = doc["kind"]
        definition: Definition
        if kind == "task":
            definition = parse_task(doc["definition"])
        else:
            definition = parse_workflow(doc["definition"])
        plan_doc = doc.get("plan")
        plan = (
            ExecutionPlan(stages=tuple(tuple(stage) for stage in plan_doc)) if plan_doc else None
        )
        return cls(
            uuid=doc["uuid"],
            kind=kind,
            definition=definition,
            context_ref=doc["context_ref"],
            submitter_ref=doc["submitter_ref"],
            status=ExecutionStatus(doc["status"]),
            status_history=[
                (ExecutionStatus(entry["status"]), parse_timestamp(entry["timestamp"]))
                for entry in doc["status_history"]
            ],
            plan=plan,
            backend_handle=doc.get("backend_handle"),
            stdout=list(doc.get("stdout", [])),
            stderr=list(doc.get("stderr", [])),
            resource_snapshot=dict(doc.get("resource_snapshot", {})),
            reservation_id=doc.get("reservation_id"),
            reason=doc.get("reason"),
            denied_dimensions=list(doc.get("denied_dimensions", [])),
            warnings=list(doc.get("warnings", [])),
            jobs=[WorkflowJob.from_dict(j) for j in doc.get("jobs", [])],
            workspace=doc.get("workspace"),
        )

    def summary(self) -> dict[str, Any]:
        return {
            "uuid": self.uuid,
            "kind": self.kind,
            "name": self.name,
            "status": self.status.value,
            "submitted_at": render_timestamp(self.submitted_at),
            "updated_at": render_timestamp(self.updated_at),
        }


class ExecutionManager:
    def __init__(
        self,
        store: Store,
        quotas: QuotasManager,
        backend: ExecutionBackend,
        files: FilesAdapter,
        runs_root: Optional[Path] = None,
        stage_files: bool = True,
        clock: Callable[[], datetime] = utcnow,
    ):
        self._store = store
        self._quotas = quotas
        self._backend = backend
        self._files = files
        self._runs_root = Path(runs_root) if runs_root else None
        self._stage_files = stage_files and runs_root is not None
        self._clock = clock
        self._reconcile_lock = threading.Lock()

    # -- helpers ---------------------------------------------------------------

    def _context(self, slug: str) -> Context:
        return Context.from_dict(self._store.get_context(slug))

    def _persist_new(self, record: ExecutionRecord) -> None:
        self._store.put_execution(
            uuid=record.uuid,
            kind=record.kind,
            context_ref=record.context_ref,
            submitter_ref=record.submitter_ref,
            status=record.status.value,
            submitted_at=record.submitted_at.timestamp(),
            body=record.to_dict(),
        )

    def _cas(self, record: ExecutionRecord, expected: ExecutionStatus) -> None:
        self._store.cas_execution(
            record.uuid, expected.value, record.status.value, record.to_dict()
        )

    def _release(self, record: ExecutionRecord, tolerate_released: bool = False) -> None:
        if record.reservation_id is None:
            return
        try:
            self._quotas.release(record.reservation_id)
        except AlreadyReleased:
            if not tolerate_released:
                raise

    def _workspace(self, record: ExecutionRecord) -> Optional[Path]:
        return Path(record.workspace) if record.workspace else None

    def _volumes_root(self, record: ExecutionRecord) -> Optional[Path]:
        workspace = self._workspace(record)
        return workspace / "volumes" if workspace else None

    def _job_spec(self, record: ExecutionRecord, executors, name: str) -> BackendJobSpec:
        definition = record.definition
        return BackendJobSpec(
            executors=tuple(executors),
            inputs=definition.inputs,
            outputs=definition.outputs,
            volumes=tuple(v.path for v in definition.volumes),
            resources=definition.resources,
            name=name,
            volumes_dir=self._volumes_root(record),
        )

    # -- submit ------------------------------------------------------------------

    def submit(self, definition: Definition, submitter: str, context: str) -> ExecutionRecord:
        members = self._context(context).members
        if submitter not in members:
            raise NotAMember(submitter, context)

        kind = "workflow" if isinstance(definition, WorkflowSpec) else "task"
        now = self._clock()
        record = ExecutionRecord(
            uuid=new_uuid(),
            kind=kind,
            definition=definition,
            context_ref=context,
            submitter_ref=submitter,
            status=ExecutionStatus.SUBMITTED,
            status_history=[(ExecutionStatus.SUBMITTED, now)],
        )
        self._persist_new(record)

        violations = (
            validate_workflow(definition)
            if isinstance(definition, WorkflowSpec)
            else validate_task(definition)
        )
        plan: Optional[ExecutionPlan] = None
        if not violations and isinstance(definition, WorkflowSpec):
            try:
                plan = resolve_order(definition)
            except (CycleError, UnsatisfiedRead) as exc:
                violations = [str(exc)]
        if violations:
            record.reason = "; ".join(violations)
            self._apply_cas(record, ExecutionStatus.REJECTED)
            raise ValidationFailed(violations, uuid=record.uuid)

        try:
            token = self._quotas.check_and_reserve(
                submitter, context, request_amounts(definition.resources)
            )
        except QuotaExceeded as exc:
            record.reason = str(exc)
            record.denied_dimensions = list(exc.dimensions)
            self._apply_cas(record, ExecutionStatus.REJECTED)
            return record

        record.reservation_id = token.id
        record.resource_snapshot = dict(token.amounts)
        record.plan = plan
        if plan is not None:
            record.jobs = [
                WorkflowJob(executor_id=executor_id, stage=stage_index)
                for stage_index, stage in enumerate(plan.stages)
                for executor_id in stage
            ]
        self._apply_cas(record, ExecutionStatus.APPROVED)

        if self._stage_files:
            workspace = self._runs_root / record.uuid
            (workspace / "volumes").mkdir(parents=True, exist_ok=True)
            record.workspace = str(workspace)

        # SCHEDULED marks the hand-off to the backend; a failed hand-off takes
        # the legal SCHEDULED -> ERROR edge with no backend handle.
        try:
            self._apply_cas(record, ExecutionStatus.SCHEDULED)
        except StaleWrite:
            return self.load(record.uuid)  # canceled mid-admission
        try:
            if self._stage_files and record.definition.inputs:
                self._files.stage_inputs(
                    record.definition.inputs, submitter, self._volumes_root(record)
                )
            if kind == "task":
                handle = self._backend.submit(
                    self._job_spec(record, record.definition.executors, record.uuid)
                )
                record.backend_handle = handle
            else:
                self._submit_stage(record, 0)
                record.backend_handle = f"run-{record.uuid}"
        except (InputMissing, SubmissionRejected, BackendUnavailable) as exc:
            record.reason = str(exc)
            for handle in self._active_handles(record):  # partially submitted stage
                try:
                    self._backend.cancel(handle)
                except Exception:  # noqa: BLE001
                    pass
            try:
                self._apply_cas(record, ExecutionStatus.ERROR)
            except StaleWrite:
                pass  # a concurrent cancel already terminated the record
            self._release(record, tolerate_released=True)
            raise
        self._cas_current(record)
        return record

    def _apply_cas(self, record: ExecutionRecord, status: ExecutionStatus) -> None:
        previous = record.status
        record.apply(status, self._clock())
        self._cas(record, previous)

    def _cas_current(self, record: ExecutionRecord) -> None:
        """Persist body changes without a status change; loses quietly to races."""
        try:
            self._cas(record, record.status)
        except StaleWrite:
            # A concurrent transition (e.g. cancel) won; make sure nothing the
            # backend just accepted keeps running unobserved.
            current = self.load(record.uuid)
            if current.status in TERMINAL_STATUSES:
                for handle in self._active_handles(record):
                    try:
                        self._backend.cancel(handle)
                    except Exception:  # noqa: BLE001 - best effort
                        pass

    def _active_handles(self, record: ExecutionRecord) -> list[str]:
        if record.kind == "task":
            return [record.backend_handle] if record.backend_handle else []
        return [
            job.handle
            for job in record.jobs
            if job.handle and (job.state is None or job.state not in TERMINAL_JOB_STATES)
        ]

    def _submit_stage(self, record: ExecutionRecord, stage_index: int) -> None:
        assert isinstance(record.definition, WorkflowSpec)
        for job in record.jobs:
            if job.stage != stage_index or job.handle is not None:
                continue
            executor = record.definition.executor_by_id(job.executor_id)
            job.handle = self._backend.submit(
                self._job_spec(
                    record,
                    [executor.as_executor()],
                    f"{record.uuid}:{job.executor_id}",
                )
            )

    # -- reads ---------------------------------------------------------------------

    def load(self, uuid: str) -> ExecutionRecord:
        return ExecutionRecord.from_dict(self._store.get_execution(uuid))

    def get(self, uuid: str, caller_context: str) -> ExecutionRecord:
        record = self.load(uuid)
        if record.context_ref != caller_context:
            raise Forbidden(f"execution {uuid} belongs to another context")
        return record

    def list(
        self,
        context: str,
        status: Optional[ExecutionStatus] = None,
        kind: Optional[str] = None,
        page: int = 1,
        page_size: int = 20,
    ) -> dict[str, Any]:
        bodies = self._store.list_executions(
            context_ref=context,
            status=status.value if status else None,
            kind=kind,
        )
        total = len(bodies)
        start = (page - 1) * page_size
        items = [ExecutionRecord.from_dict(doc).summary() for doc in bodies[start : start + page_size]]
        return {
            "items": items,
            "page": page,
            "page_size": page_size,
            "total": total,
            "pages": max(1, math.ceil(total / page_size)) if page_size else 1,
        }

    def logs(self, uuid: str, channel: str, caller_context: str) -> list[str]:
        record = self.get(uuid, caller_context)
        if record.kind == "task":
            texts = record.stdout if channel == "stdout" else record.stderr
            padded = list(texts) + [""] * (record.executor_count() - len(texts))
            return padded[: record.executor_count()]
        by_id = {job.executor_id: job for job in record.jobs}
        order = record.plan.linearization() if record.plan else [j.executor_id for j in record.jobs]
        return [
            getattr(by_id[executor_id], channel, "") if executor_id in by_id else ""
            for executor_id in order
        ]

    # -- cancel -----------------------------------------------------------------------

    def cancel(self, uuid: str, caller_context: str) -> tuple[ExecutionRecord, bool]:
        while True:
            record = self.get(uuid, caller_context)
            if record.status in TERMINAL_STATUSES:
                return record, True
            previous = record.status
            record.apply(ExecutionStatus.CANCELED, self._clock())
            try:
                self._cas(record, previous)
            except StaleWrite:
                continue  # someone else moved the status; re-read and retry
            for handle in self._active_handles(record):
                try:
                    self._backend.cancel(handle)
                except (UnknownHandle, BackendUnavailable):
                    pass
            self._release(record)
            return record, False

    # -- reconcile ------------------------------------------------------------------------

    def reconcile(self) -> int:
        """Poll the backend for every live record; returns how many changed status."""
        with self._reconcile_lock:
            updated = 0
            for status in (ExecutionStatus.SCHEDULED, ExecutionStatus.RUNNING):
                for body in self._store.list_executions(status=status.value):
                    record = ExecutionRecord.from_dict(body)
                    try:
                        if record.kind == "task":
                            updated += self._reconcile_task(record)
                        else:
                            updated += self._reconcile_workflow(record)
                    except StaleWrite:
                        continue  # lost a race; the next sweep sees the new status
                    except BackendUnavailable as exc:
                        log.warning("reconcile: backend unreachable for %s: %s", record.uuid, exc)
                        continue
                    except Exception as exc:  # noqa: BLE001 - sweep must not abort
                        log.exception("reconcile: skipping %s: %s", record.uuid, exc)
                        continue
            return updated

    def _reconcile_task(self, record: ExecutionRecord) -> int:
        if not record.backend_handle:
            return 0  # admission still in flight in another thread
        try:
            job = self._backend.poll(record.backend_handle)
        except UnknownHandle:
            # Definitive: the backend lost the job (e.g. it restarted).
            record.reason = "backend no longer knows this job"
            return self._finalize(record, ExecutionStatus.ERROR)

        target = job_state_to_status(job.state)
        if target == record.status or target == ExecutionStatus.SCHEDULED:
            return 0
        if target == ExecutionStatus.RUNNING:
            self._apply_cas(record, ExecutionStatus.RUNNING)
            return 1
        self._store_task_logs(record, job)
        if target == ExecutionStatus.ERROR:
            record.reason = job.error or "backend reported a failure"
        return self._finalize(record, target)

    def _store_task_logs(self, record: ExecutionRecord, job: BackendJob) -> None:
        count = record.executor_count()
        record.stdout = (list(job.stdout) + [""] * count)[:count]
        record.stderr = (list(job.stderr) + [""] * count)[:count]

    def _finalize(self, record: ExecutionRecord, target: ExecutionStatus) -> int:
        """Drive the record to a terminal status along legal edges, then clean up."""
        previous = record.status
        now = self._clock()
        if target == ExecutionStatus.COMPLETED and record.status == ExecutionStatus.SCHEDULED:
            record.apply(ExecutionStatus.RUNNING, now)
        if target == ExecutionStatus.COMPLETED and self._stage_files and record.workspace:
            _, warnings = self._files.collect_outputs(
                record.definition.outputs, record.submitter_ref, self._volumes_root(record)
            )
            record.warnings.extend(warnings)
        record.apply(target, now)
        self._cas(record, previous)
        self._release(record, tolerate_released=True)
        return 1

    def _reconcile_workflow(self, record: ExecutionRecord) -> int:
        previous = record.status
        failed: Optional[WorkflowJob] = None
        canceled = False
        polled = False
        for job in record.jobs:
            if job.handle is None or (job.state in TERMINAL_JOB_STATES):
                continue
            try:
                view = self._backend.poll(job.handle)
            except UnknownHandle:
                job.state = "SYSTEM_ERROR"
                job.stderr = job.stderr or "backend no longer knows this job"
                polled = True
                continue
            polled = True
            job.state = view.state
            if view.stdout:
                job.stdout = view.stdout[0]
            if view.stderr:
                job.stderr = view.stderr[0]
            if view.exit_codes:
                job.exit_code = view.exit_codes[0]

        for job in record.jobs:
            if job.state in ("EXECUTOR_ERROR", "SYSTEM_ERROR"):
                failed = job
                break
            if job.state == "CANCELED":
                canceled = True

        if failed is not None:
            # Fail fast: stop in-flight siblings, never start later stages.
            for handle in self._active_handles(record):
                try:
                    self._backend.cancel(handle)
                except Exception:  # noqa: BLE001
                    pass
            record.reason = (
                f"executor '{failed.executor_id}' failed"
                + (f" with exit code {failed.exit_code}" if failed.exit_code is not None else "")
            )
            return self._finalize_workflow(record, ExecutionStatus.ERROR, previous)
        if canceled:
            return self._finalize_workflow(record, ExecutionStatus.CANCELED, previous)

        if all(job.state == "COMPLETE" for job in record.jobs):
            return self._finalize_workflow(record, ExecutionStatus.COMPLETED, previous)

        # Advance to the first incomplete stage once everything before it is done.
        stages = max((job.stage for job in record.jobs), default=-1) + 1
        for stage_index in range(stages):
            stage_jobs = [job for job in record.jobs if job.stage == stage_index]
            if all(job.state == "COMPLETE" for job in stage_jobs):
                continue
            if any(job.handle is None for job in stage_jobs):
                try:
                    self._submit_stage(record, stage_index)
                except (SubmissionRejected, BackendUnavailable) as exc:
                    log.warning(
                        "reconcile: stage %d of %s not submitted yet: %s",
                        stage_index,
                        record.uuid,
                        exc,
                    )
            break

        started = any(
            job.state is not None and job.state != "QUEUED" for job in record.jobs
        )
        if record.status == ExecutionStatus.SCHEDULED and started:
            self._apply_cas(record, ExecutionStatus.RUNNING)
            return 1
        if polled or any(job.handle for job in record.jobs):
            self._cas(record, previous)
        return 0

    def _finalize_workflow(
        self, record: ExecutionRecord, target: ExecutionStatus, previous: ExecutionStatus
    ) -> int:
        now = self._clock()
        if target == ExecutionStatus.COMPLETED and record.status == ExecutionStatus.SCHEDULED:
            record.apply(ExecutionStatus.RUNNING, now)
        if target == ExecutionStatus.COMPLETED and self._stage_files and record.workspace:
            _, warnings = self._files.collect_outputs(
                record.definition.outputs, record.submitter_ref, self._volumes_root(record)
            )
            record.warnings.extend(warnings)
        record.apply(target, now)
        self._cas(record, previous)
        self._release(record, tolerate_released=True)
        return 1

    # -- startup recovery ---------------------------------------------------------------

    def recover(self) -> None:
        """Repair records left behind by an interrupted process.

        SUBMITTED admissions are rejected, APPROVED ones canceled (both legal
        edges); reservations are rebuilt from SCHEDULED/RUNNING records only.
        """
        for body in self._store.list_executions(status=ExecutionStatus.SUBMITTED.value):
            record = ExecutionRecord.from_dict(body)
            record.reason = "admission interrupted by a service restart"
            try:
                self._apply_cas(record, ExecutionStatus.REJECTED)
            except StaleWrite:
                pass
        for body in self._store.list_executions(status=ExecutionStatus.APPROVED.value):
            record = ExecutionRecord.from_dict(body)
            record.reason = "admission interrupted by a service restart"
            try:
                self._apply_cas(record, ExecutionStatus.CANCELED)
            except StaleWrite:
                pass
        for status in (ExecutionStatus.SCHEDULED, ExecutionStatus.RUNNING):
            for body in self._store.list_executions(status=status.value):
                record = ExecutionRecord.from_dict(body)
                if record.reservation_id:
                    self._quotas.restore(
                        ReservationToken(
                            id=record.reservation_id,
                            user=record.submitter_ref,
                            context=record.context_ref,
                            amounts=dict(record.resource_snapshot),
                        )
                    )


class ReconcileLoop:
    """Background sweep thread; the 2 s default keeps the dashboard feeling live."""

    def __init__(self, manager: ExecutionManager, interval_seconds: float = 2.0):
        self._manager = manager
        self.interval = interval_seconds
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="reconcile")

    def start(self) -> "ReconcileLoop":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self._manager.reconcile()
            except Exception:  # noqa: BLE001 - the loop must survive anything
                log.exception("reconcile sweep failed")
