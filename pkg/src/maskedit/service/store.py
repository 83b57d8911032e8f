"""Filesystem persistence: content-addressed blobs plus an append-only job index.

Every state transition appends one JSON line; the latest line per id wins on
reload, which makes the index crash-tolerant without any external database.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import InvalidInputError

QUEUED = "QUEUED"
RUNNING = "RUNNING"
DONE = "DONE"
FAILED = "FAILED"

_TRANSITIONS = {
    (QUEUED, RUNNING),
    (RUNNING, DONE),
    (RUNNING, FAILED),
    (RUNNING, QUEUED),  # crash recovery only
}


@dataclass
class JobRecord:
    id: str
    state: str
    fingerprint: str
    created_at: float
    request: dict
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    error: Optional[str] = None
    progress_step: int = 0
    progress_total: int = 0
    result_blob: Optional[str] = None
    config_blob: Optional[str] = None
    extras: dict = field(default_factory=dict)


class JobStore:
    def __init__(self, root):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.index_path = self.root / "jobs.jsonl"
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._jobs: dict[str, JobRecord] = {}
        self._load()

    # -- blobs --------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.blob_path(digest)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp" + secrets.token_hex(4))
            tmp.write_bytes(data)
            tmp.replace(path)
        return digest

    def blob_path(self, digest: str) -> Path:
        return self.blob_dir / digest[:2] / digest

    def get_blob(self, digest: str) -> bytes:
        return self.blob_path(digest).read_bytes()

    # -- index --------------------------------------------------------------

    def _load(self):
        if not self.index_path.exists():
            return
        for line in self.index_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = JobRecord(**json.loads(line))
            self._jobs[rec.id] = rec

    def _append(self, rec: JobRecord):
        with self.index_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(rec)) + "\n")

    def create(self, request: dict, fingerprint: str) -> JobRecord:
        rec = JobRecord(
            id=secrets.token_hex(8),
            state=QUEUED,
            fingerprint=fingerprint,
            created_at=time.time(),
            request=request,
            progress_total=int(request.get("config", {}).get("steps", 0)),
        )
        with self._lock:
            self._jobs[rec.id] = rec
            self._append(rec)
        return rec

    def get(self, job_id: str) -> Optional[JobRecord]:
        with self._lock:
            return self._jobs.get(job_id)

    def find_fingerprint(self, fingerprint: str, max_age_s: float) -> Optional[JobRecord]:
        now = time.time()
        with self._lock:
            matches = [
                r
                for r in self._jobs.values()
                if r.fingerprint == fingerprint and now - r.created_at <= max_age_s
            ]
        return max(matches, key=lambda r: r.created_at) if matches else None

    def transition(self, job_id: str, new_state: str, **fields) -> JobRecord:
        with self._lock:
            rec = self._jobs[job_id]
            if (rec.state, new_state) not in _TRANSITIONS:
                raise InvalidInputError(f"illegal transition {rec.state} -> {new_state}")
            if new_state == DONE and not fields.get("result_blob"):
                raise InvalidInputError("DONE requires a result blob")
            if new_state == FAILED and not fields.get("error"):
                raise InvalidInputError("FAILED requires an error detail")
            rec.state = new_state
            for k, v in fields.items():
                setattr(rec, k, v)
            self._append(rec)
            return rec

    def set_progress(self, job_id: str, step: int, total: int):
        # progress is volatile; persisted only at the next state transition
        with self._lock:
            rec = self._jobs[job_id]
            rec.progress_step = step
            rec.progress_total = total

    def recover_interrupted(self) -> list[str]:
        """Re-queue jobs that were mid-run when the process died."""
        requeued = []
        with self._lock:
            for rec in self._jobs.values():
                if rec.state == RUNNING:
                    rec.state = QUEUED
                    rec.started_at = None
                    rec.progress_step = 0
                    self._append(rec)
                    requeued.append(rec.id)
        return requeued

    def queued_ids(self) -> list[str]:
        with self._lock:
            return [
                r.id
                for r in sorted(self._jobs.values(), key=lambda r: r.created_at)
                if r.state == QUEUED
            ]
