"""Error types shared across managers."""
from __future__ import annotations


class TasklabError(Exception):
    """Base class for all service-level failures."""

    code = "error"


class NotFound(TasklabError):
    code = "not_found"


class Forbidden(TasklabError):
    code = "forbidden"


class NotAMember(TasklabError):
    code = "not_a_member"

    def __init__(self, user: str, context: str):
        super().__init__(f"user '{user}' is not a member of context '{context}'")
        self.user = user
        self.context = context


class ValidationFailed(TasklabError):
    code = "validation_failed"

    def __init__(self, violations: list[str], uuid: str | None = None):
        super().__init__("; ".join(violations) or "validation failed")
        self.violations = violations
        self.uuid = uuid


class BackendUnavailable(TasklabError):
    code = "backend_unavailable"
