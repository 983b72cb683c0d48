"""Long-running job records with ordered progress notifications.

Registration and image builds run asynchronously; callers get a job id,
poll it or subscribe to its event stream, and see monotone progress that
hits 100 exactly when the job is Done.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

from .errors import JobTerminal, UnknownJob
from .storage import JournalStore, Table

REGISTER = "Register"
IMAGE_BUILD = "ImageBuild"

QUEUED = "Queued"
RUNNING = "Running"
DONE = "Done"
FAILED = "Failed"

TERMINAL = (DONE, FAILED)


@dataclass
class JobRecord:
    id: str
    kind: str
    status: str = QUEUED
    progress: int = 0
    events: List[dict] = field(default_factory=list)
    result: Dict[str, object] = field(default_factory=dict)
    created: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "progress": self.progress,
            "events": list(self.events),
            "result": dict(self.result),
            "created": self.created,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JobRecord":
        return cls(
            id=d["id"],
            kind=d["kind"],
            status=d["status"],
            progress=d["progress"],
            events=list(d.get("events", [])),
            result=dict(d.get("result", {})),
            created=d.get("created", 0.0),
        )


class JobBoard:
    """Registry of job records; subscribers see events strictly in order."""

    def __init__(self, store: Optional[JournalStore] = None):
        self._tbl = Table(store, "jobs")
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._jobs: Dict[str, JobRecord] = {
            k: JobRecord.from_dict(v) for k, v in self._tbl.items()
        }
        # jobs that were in flight when the service died cannot resume
        for job in self._jobs.values():
            if job.status not in TERMINAL:
                job.status = FAILED
                job.events.append(self._event("interrupted by service restart", job.progress))
                self._tbl.put(job.id, job.to_dict())

    @staticmethod
    def _event(message: str, progress: int) -> dict:
        return {"ts": time.time(), "message": message, "progress": progress}

    def create(self, kind: str) -> JobRecord:
        with self._lock:
            job = JobRecord(id=uuid.uuid4().hex, kind=kind, created=time.time())
            self._jobs[job.id] = job
            self._tbl.put(job.id, job.to_dict())
            return job

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJob(f"no such job: {job_id}")
            return job

    def start(self, job_id: str) -> None:
        with self._cond:
            job = self.get(job_id)
            if job.status == QUEUED:
                job.status = RUNNING
                self._tbl.put(job.id, job.to_dict())
                self._cond.notify_all()

    def notify(self, job_id: str, message: str, progress: Optional[int] = None) -> JobRecord:
        """Append an event; progress can only move forward."""
        with self._cond:
            job = self.get(job_id)
            if job.status in TERMINAL:
                raise JobTerminal(f"job {job_id} is {job.status}")
            if progress is not None:
                job.progress = max(job.progress, min(100, int(progress)))
            job.events.append(self._event(message, job.progress))
            self._tbl.put(job.id, job.to_dict())
            self._cond.notify_all()
            return job

    def finish(self, job_id: str, ok: bool, message: str = "", result: Optional[dict] = None) -> JobRecord:
        with self._cond:
            job = self.get(job_id)
            if job.status in TERMINAL:
                raise JobTerminal(f"job {job_id} is {job.status}")
            job.status = DONE if ok else FAILED
            if ok:
                job.progress = 100
            if result:
                job.result.update(result)
            job.events.append(self._event(message or job.status.lower(), job.progress))
            self._tbl.put(job.id, job.to_dict())
            self._cond.notify_all()
            return job

    def subscribe(self, job_id: str, poll_timeout: float = 30.0) -> Iterator[dict]:
        """Yield events from the beginning, in order, until the job ends."""
        index = 0
        while True:
            with self._cond:
                job = self.get(job_id)
                while index >= len(job.events) and job.status not in TERMINAL:
                    if not self._cond.wait(timeout=poll_timeout):
                        return
                batch = job.events[index:]
                index += len(batch)
                terminal = job.status in TERMINAL and index >= len(job.events)
            for event in batch:
                yield event
            if terminal:
                return

    def list_jobs(self) -> List[JobRecord]:
        with self._lock:
            return list(self._jobs.values())
