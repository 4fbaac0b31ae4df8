from .base import (
    BackendJob,
    BackendJobSpec,
    ExecutionBackend,
    SubmissionRejected,
    UnknownHandle,
    job_state_to_status,
)
from .local import LocalBackend
from .tes import TesBackend, tes_serialize

__all__ = [
    "BackendJob",
    "BackendJobSpec",
    "ExecutionBackend",
    "LocalBackend",
    "SubmissionRejected",
    "TesBackend",
    "UnknownHandle",
    "job_state_to_status",
    "tes_serialize",
]
