from .app import create_app
from .config import Settings
from .store import DONE, FAILED, QUEUED, RUNNING, JobStore
from .worker import WorkerPool, build_edit_request, execute_job

__all__ = [
    "DONE",
    "FAILED",
    "JobStore",
    "QUEUED",
    "RUNNING",
    "Settings",
    "WorkerPool",
    "build_edit_request",
    "create_app",
    "execute_job",
]
