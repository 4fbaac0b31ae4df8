"""Experiments: named groupings of terminal executions with aggregate metadata."""
from __future__ import annotations

import threading
from typing import Any, Callable, Optional

from .domain import Context, Experiment, ExecutionStatus, render_timestamp, utcnow
from .errors import Forbidden, NotAMember, NotFound, TasklabError
from .manager import ExecutionRecord
from .persistence import Store

ASSIGNABLE_STATUSES = frozenset({ExecutionStatus.COMPLETED, ExecutionStatus.ERROR})


class DuplicateName(TasklabError):
    code = "duplicate_name"


class ParticipantNotInContext(TasklabError):
    code = "participant_not_in_context"

    def __init__(self, participant: str, context: str):
        super().__init__(f"participant '{participant}' is not a member of '{context}'")
        self.participant = participant


class TaskNotFound(TasklabError):
    code = "task_not_found"

    def __init__(self, uuid: str):
        super().__init__(f"execution '{uuid}' does not exist")
        self.uuid = uuid


class TaskOutsideContext(TasklabError):
    code = "task_outside_context"

    def __init__(self, uuid: str):
        super().__init__(f"execution '{uuid}' belongs to another context")
        self.uuid = uuid


class SubmitterNotParticipant(TasklabError):
    code = "submitter_not_participant"

    def __init__(self, uuid: str, submitter: str):
        super().__init__(f"execution '{uuid}' was submitted by non-participant '{submitter}'")
        self.uuid = uuid
        self.submitter = submitter


class TaskNotTerminal(TasklabError):
    code = "task_not_terminal"

    def __init__(self, uuid: str, status: str):
        super().__init__(f"execution '{uuid}' is still {status}; only finished runs group")
        self.uuid = uuid


class ExperimentsManager:
    def __init__(self, store: Store, clock: Callable = utcnow):
        self._store = store
        self._clock = clock
        self._mutate = threading.Lock()  # experiment mutations are serialized

    def _context_members(self, slug: str) -> frozenset[str]:
        return Context.from_dict(self._store.get_context(slug)).members

    def _get(self, owner: str, name: str) -> Experiment:
        return Experiment.from_dict(self._store.get_experiment(owner, name))

    def _save(self, experiment: Experiment, replace: bool) -> None:
        self._store.put_experiment(
            owner=experiment.owner,
            name=experiment.name,
            context_ref=experiment.context_ref,
            created_at=experiment.created_at.timestamp(),
            body=experiment.to_dict(),
            replace=replace,
        )

    def create_experiment(
        self,
        owner: str,
        name: str,
        context: str,
        description: Optional[str] = None,
        participants: Optional[list[str]] = None,
    ) -> Experiment:
        members = self._context_members(context)
        if owner not in members:
            raise NotAMember(owner, context)
        for participant in participants or []:
            if participant not in members:
                raise ParticipantNotInContext(participant, context)
        with self._mutate:
            if self._store.has_experiment(owner, name):
                raise DuplicateName(f"experiment '{owner}/{name}' already exists")
            experiment = Experiment(
                owner=owner,
                name=name,
                context_ref=context,
                description=description,
                participants=frozenset(participants or []) | {owner},
                created_at=self._clock(),
            )
            self._save(experiment, replace=False)
        return experiment

    def _require_participant(self, experiment: Experiment, caller: str) -> None:
        if caller not in experiment.participants:
            raise Forbidden(f"'{caller}' does not participate in this experiment")

    def assign_tasks(self, caller: str, owner: str, name: str, task_uuids: list[str]) -> Experiment:
        """Replace the experiment's execution set (PUT semantics)."""
        with self._mutate:
            experiment = self._get(owner, name)
            self._require_participant(experiment, caller)
            for uuid in task_uuids:
                try:
                    body = self._store.get_execution(uuid)
                except NotFound:
                    raise TaskNotFound(uuid) from None
                record = ExecutionRecord.from_dict(body)
                if record.context_ref != experiment.context_ref:
                    raise TaskOutsideContext(uuid)
                if record.submitter_ref not in experiment.participants:
                    raise SubmitterNotParticipant(uuid, record.submitter_ref)
                if record.status not in ASSIGNABLE_STATUSES:
                    raise TaskNotTerminal(uuid, record.status.value)
            updated = Experiment(
                owner=experiment.owner,
                name=experiment.name,
                context_ref=experiment.context_ref,
                description=experiment.description,
                participants=experiment.participants,
                task_refs=frozenset(task_uuids),
                created_at=experiment.created_at,
            )
            self._save(updated, replace=True)
        return updated

    def get_experiment(self, caller: str, owner: str, name: str) -> dict[str, Any]:
        experiment = self._get(owner, name)
        self._require_participant(experiment, caller)
        doc = experiment.to_dict()
        doc["aggregates"] = self._aggregates(experiment)
        return doc

    def _aggregates(self, experiment: Experiment) -> dict[str, Any]:
        """Counts per terminal status plus reservation x wall-time totals.

        Wall time is the reservation window: APPROVED until the terminal entry
        of status_history.
        """
        status_counts: dict[str, int] = {}
        cpu_core_seconds = 0.0
        ram_gb_seconds = 0.0
        earliest_submission = None
        latest_completion = None
        for uuid in sorted(experiment.task_refs):
            record = ExecutionRecord.from_dict(self._store.get_execution(uuid))
            status_counts[record.status.value] = status_counts.get(record.status.value, 0) + 1
            approved_at = next(
                (at for status, at in record.status_history if status == ExecutionStatus.APPROVED),
                None,
            )
            terminal_at = record.status_history[-1][1]
            if approved_at is not None:
                wall = (terminal_at - approved_at).total_seconds()
                cpu_core_seconds += record.resource_snapshot.get("cpu_cores", 0) * wall
                ram_gb_seconds += record.resource_snapshot.get("ram_gb", 0) * wall
            submitted = record.submitted_at
            if earliest_submission is None or submitted < earliest_submission:
                earliest_submission = submitted
            if record.status == ExecutionStatus.COMPLETED and (
                latest_completion is None or terminal_at > latest_completion
            ):
                latest_completion = terminal_at
        return {
            "execution_count": len(experiment.task_refs),
            "status_counts": status_counts,
            "cpu_core_seconds": cpu_core_seconds,
            "ram_gb_seconds": ram_gb_seconds,
            "earliest_submission": render_timestamp(earliest_submission)
            if earliest_submission
            else None,
            "latest_completion": render_timestamp(latest_completion)
            if latest_completion
            else None,
        }

    def list_experiments(self, caller: str) -> list[dict[str, Any]]:
        """Experiments the caller participates in, newest first."""
        visible = []
        for body in self._store.list_experiments():
            experiment = Experiment.from_dict(body)
            if caller in experiment.participants:
                visible.append(experiment.to_dict())
        return visible

    def update_experiment(
        self, caller: str, owner: str, name: str, patch: dict[str, Any]
    ) -> Experiment:
        """PATCH semantics over description / participants; owner only."""
        with self._mutate:
            experiment = self._get(owner, name)
            if caller != experiment.owner:
                raise Forbidden("only the owner may update an experiment")
            description = experiment.description
            participants = experiment.participants
            if "description" in patch:
                description = patch["description"]
            if "participants" in patch:
                members = self._context_members(experiment.context_ref)
                participants = frozenset(patch["participants"]) | {experiment.owner}
                for participant in participants:
                    if participant not in members:
                        raise ParticipantNotInContext(participant, experiment.context_ref)
                # Membership closure: assigned executions keep their submitters.
                for uuid in experiment.task_refs:
                    record = ExecutionRecord.from_dict(self._store.get_execution(uuid))
                    if record.submitter_ref not in participants:
                        raise SubmitterNotParticipant(uuid, record.submitter_ref)
            updated = Experiment(
                owner=experiment.owner,
                name=experiment.name,
                context_ref=experiment.context_ref,
                description=description,
                participants=participants,
                task_refs=experiment.task_refs,
                created_at=experiment.created_at,
            )
            self._save(updated, replace=True)
        return updated

    def delete_experiment(self, caller: str, owner: str, name: str) -> None:
        """Removes the grouping only; member execution records are untouched."""
        with self._mutate:
            experiment = self._get(owner, name)
            if caller != experiment.owner:
                raise Forbidden("only the owner may delete an experiment")
            self._store.delete_experiment(owner, name)
