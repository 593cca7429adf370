"""Durable job queue and pub/sub between the API service and workers.

Jobs persist across restarts; assignment is an atomic compare-and-set
under the queue lock, so concurrent pollers can never receive the same
job. Delivery of results is at-least-once with idempotent acceptance: a
result is accepted only from the worker and attempt currently bound to
the job, so a stale attempt (for example a worker that went silent, got
swept, and later reported anyway) is discarded.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

import jsonschema

from .errors import (IllegalTransitionError, InvalidPayloadError, UnknownJobError,
                     ValidationError)
from .store import Event, Store

JOB_KINDS = ("tile_pyramid", "infer", "adapt", "evaluate")
TERMINAL_STATES = ("succeeded", "failed", "cancelled")
JOB_STATES = ("queued", "assigned", "running") + TERMINAL_STATES

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_HEARTBEAT_TIMEOUT = 30.0
DEFAULT_HEARTBEAT_INTERVAL = 10.0

JOBS_TOPIC = "jobs"

_LEGAL = {
    "queued": {"assigned", "cancelled"},
    "assigned": {"running", "queued", "failed", "cancelled"},
    "running": {"succeeded", "queued", "failed", "cancelled"},
    "succeeded": set(),
    "failed": set(),
    "cancelled": set(),
}

_PARAMS_SCHEMA = {"type": "object"}
_SPACE_SCHEMA = {"type": "object"}

PAYLOAD_SCHEMAS = {
    "tile_pyramid": {
        "type": "object",
        "properties": {
            "raster_id": {"type": "string"},
            "resampling": {"enum": ["nearest", "bilinear"]},
        },
        "required": ["raster_id"],
        "additionalProperties": False,
    },
    "infer": {
        "type": "object",
        "properties": {
            "raster_id": {"type": "string"},
            "model_id": {"type": "string"},
            "set_id": {"type": "string"},
        },
        "required": ["raster_id", "model_id"],
        "additionalProperties": False,
    },
    "adapt": {
        "type": "object",
        "properties": {
            "parent_model_id": {"type": "string"},
            "set_id": {"type": "string"},
            "name": {"type": "string"},
            "search_space": _SPACE_SCHEMA,
        },
        "required": ["parent_model_id", "set_id"],
        "additionalProperties": False,
    },
    "evaluate": {
        "type": "object",
        "properties": {
            "set_id": {"type": "string"},
            "truth_set_id": {"type": "string"},
            "mode": {"enum": ["objects", "pixels"]},
            "iou_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "tiles": {"enum": ["all", "reviewed", "unreviewed"]},
            "review_set": {"type": "string"},
            "exclude_tiles": {
                "type": "array",
                "items": {"type": "array", "items": {"type": "integer"},
                          "minItems": 2, "maxItems": 2},
            },
        },
        "required": ["set_id", "truth_set_id"],
        "additionalProperties": False,
    },
}

_VALIDATORS = {kind: jsonschema.Draft202012Validator(schema)
               for kind, schema in PAYLOAD_SCHEMAS.items()}


@dataclass
class Job:
    id: str
    kind: str
    payload: dict
    state: str = "queued"
    attempts: int = 0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    assigned_worker: str | None = None
    current_attempt: int | None = None
    history: list = field(default_factory=list)  # [(state, ts), ...]
    result: dict | None = None
    error: str | None = None
    progress: float = 0.0
    created_seq: int = 0
    project_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id, "kind": self.kind, "payload": self.payload,
            "state": self.state, "attempts": self.attempts,
            "max_attempts": self.max_attempts,
            "assigned_worker": self.assigned_worker,
            "current_attempt": self.current_attempt,
            "history": [list(h) for h in self.history],
            "result": self.result, "error": self.error,
            "progress": self.progress, "created_seq": self.created_seq,
            "project_id": self.project_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Job":
        job = cls(id=d["id"], kind=d["kind"], payload=d["payload"])
        for key in ("state", "attempts", "max_attempts", "assigned_worker",
                    "current_attempt", "result", "error", "progress",
                    "created_seq", "project_id"):
            setattr(job, key, d.get(key, getattr(job, key)))
        job.history = [tuple(h) for h in d.get("history", [])]
        return job

    def to_public(self) -> dict:
        d = self.to_dict()
        d.pop("history")
        return d

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES


@dataclass
class WorkerSession:
    worker_id: str
    capabilities: set[str]
    last_heartbeat: float
    in_flight: set[str] = field(default_factory=set)


class JobQueue:
    def __init__(self, store: Store, clock=time.time,
                 max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                 heartbeat_timeout: float = DEFAULT_HEARTBEAT_TIMEOUT):
        self._store = store
        self._clock = clock
        self._max_attempts = max_attempts
        self._timeout = heartbeat_timeout
        self._lock = threading.RLock()
        self._sessions: dict[str, WorkerSession] = {}
        # kind -> finalizer(job, result_payload) -> stored result dict
        self._finalizers: dict[str, callable] = {}
        existing = [Job.from_dict(r.data) for r in store.records.list("jobs")]
        self._next_seq = max((j.created_seq for j in existing), default=0) + 1

    # -- pub/sub passthrough -------------------------------------------------

    def publish(self, topic: str, type: str, payload: dict) -> Event:
        return self._store.events.publish(topic, type, payload)

    def subscribe(self, topic: str, after_seq: int = 0) -> list[Event]:
        return self._store.events.read(topic, after_seq=after_seq)

    def set_finalizer(self, kind: str, fn):
        self._finalizers[kind] = fn

    # -- job persistence helpers ----------------------------------------------

    def _save(self, job: Job):
        self._store.records.put("jobs", job.id, job.to_dict(), ref=job.state,
                                ref2=job.kind)

    def _load(self, job_id: str) -> Job:
        rec = self._store.records.get("jobs", job_id)
        if rec is None:
            raise UnknownJobError(f"job {job_id!r} not found")
        return Job.from_dict(rec.data)

    def _transition(self, job: Job, new_state: str):
        if new_state not in _LEGAL[job.state]:
            raise IllegalTransitionError(f"{job.state} -> {new_state} is not legal")
        job.state = new_state
        job.history.append((new_state, self._clock()))

    def _emit(self, job: Job):
        self.publish(JOBS_TOPIC, "job.updated", {"job": job.to_public()})
        if job.project_id:
            self.publish(f"project.{job.project_id}", "job.updated",
                         {"job": job.to_public()})

    # -- operations ------------------------------------------------------------

    def submit(self, kind: str, payload: dict, project_id: str | None = None) -> Job:
        """Validate and enqueue; publishes a queue event."""
        if kind not in JOB_KINDS:
            raise InvalidPayloadError(f"unknown job kind {kind!r}")
        errors = sorted(_VALIDATORS[kind].iter_errors(payload or {}),
                        key=lambda e: e.path)
        if errors:
            raise InvalidPayloadError(
                f"payload invalid for {kind}: {errors[0].message}")
        with self._lock:
            job = Job(id=f"job-{uuid.uuid4().hex[:12]}", kind=kind, payload=payload,
                      max_attempts=self._max_attempts, created_seq=self._next_seq,
                      project_id=project_id)
            self._next_seq += 1
            job.history.append(("queued", self._clock()))
            self._save(job)
        self._emit(job)
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            return self._load(job_id)

    def jobs(self, state: str | None = None, kind: str | None = None) -> list[Job]:
        recs = self._store.records.list("jobs", ref=state, ref2=kind)
        out = [Job.from_dict(r.data) for r in recs]
        out.sort(key=lambda j: j.created_seq)
        return out

    # -- worker sessions ---------------------------------------------------------

    def register_worker(self, worker_id: str, capabilities) -> WorkerSession:
        caps = set(capabilities)
        unknown = caps - set(JOB_KINDS)
        if not caps:
            raise ValidationError("capabilities must be non-empty")
        if unknown:
            raise ValidationError(f"unknown capabilities: {sorted(unknown)}")
        with self._lock:
            session = WorkerSession(worker_id=worker_id, capabilities=caps,
                                    last_heartbeat=self._clock())
            existing = self._sessions.get(worker_id)
            if existing:
                session.in_flight = existing.in_flight
            self._sessions[worker_id] = session
            return session

    def heartbeat(self, worker_id: str):
        with self._lock:
            session = self._sessions.get(worker_id)
            if session is not None:
                session.last_heartbeat = self._clock()

    def mark_worker_dead(self, worker_id: str):
        """Force the next sweep to requeue this worker's jobs."""
        with self._lock:
            session = self._sessions.get(worker_id)
            if session is not None:
                session.last_heartbeat = float("-inf")

    def session(self, worker_id: str) -> WorkerSession | None:
        with self._lock:
            return self._sessions.get(worker_id)

    # -- assignment ----------------------------------------------------------------

    def assign_next(self, worker_id: str) -> Job | None:
        """Oldest queued job matching the worker's capabilities, or None.

        Exactly one concurrent poller can receive a given job: selection
        and the queued->assigned write happen inside the queue lock.
        """
        with self._lock:
            session = self._sessions.get(worker_id)
            if session is None:
                raise ValidationError(f"worker {worker_id!r} is not registered")
            session.last_heartbeat = self._clock()
            candidates = [j for j in self.jobs(state="queued")
                          if j.kind in session.capabilities]
            if not candidates:
                return None
            job = min(candidates, key=lambda j: j.created_seq)
            self._transition(job, "assigned")
            job.assigned_worker = worker_id
            job.current_attempt = job.attempts + 1
            job.progress = 0.0
            self._save(job)
            session.in_flight.add(job.id)
        self._emit(job)
        return job

    def _bound(self, job: Job, worker_id: str, attempt: int) -> bool:
        return (not job.terminal and job.assigned_worker == worker_id
                and job.current_attempt == attempt)

    def start(self, job_id: str, worker_id: str, attempt: int) -> bool:
        with self._lock:
            job = self._load(job_id)
            if not self._bound(job, worker_id, attempt):
                return False
            if job.state == "assigned":
                self._transition(job, "running")
                self._save(job)
        self._emit(job)
        return True

    def report_progress(self, job_id: str, worker_id: str, attempt: int,
                        fraction: float) -> bool:
        """Progress is clamped non-decreasing per job."""
        with self._lock:
            job = self._load(job_id)
            if not self._bound(job, worker_id, attempt):
                return False
            if job.state == "assigned":
                self._transition(job, "running")
            job.progress = max(job.progress, min(max(fraction, 0.0), 1.0))
            self._save(job)
        self._emit(job)
        return True

    def complete(self, job_id: str, worker_id: str, attempt: int,
                 result: dict | None) -> bool:
        """Accept a result from the bound attempt only; stale results are
        discarded (returns False). A finalizer failure fails the attempt."""
        finalizer_error: Exception | None = None
        with self._lock:
            job = self._load(job_id)
            if not self._bound(job, worker_id, attempt):
                return False
            finalizer = self._finalizers.get(job.kind)
            stored_result = result
            if finalizer is not None:
                try:
                    stored_result = finalizer(job, result)
                except Exception as exc:  # domain errors fail the attempt
                    finalizer_error = exc
            if finalizer_error is None:
                if job.state == "assigned":
                    self._transition(job, "running")
                self._transition(job, "succeeded")
                job.result = stored_result
                job.progress = 1.0
                self._release(job)
                self._save(job)
        if finalizer_error is not None:
            self.fail_attempt(job_id, worker_id, attempt,
                              f"finalizer: {finalizer_error}")
            return True
        self._emit(job)
        return True

    def fail_attempt(self, job_id: str, worker_id: str, attempt: int,
                     message: str) -> bool:
        with self._lock:
            job = self._load(job_id)
            if not self._bound(job, worker_id, attempt):
                return False
            self._fail_current_attempt(job, message)
        self._emit(job)
        return True

    def _fail_current_attempt(self, job: Job, message: str):
        # The failed-attempt edge: requeue while attempts remain, else fail.
        job.attempts += 1
        self._release(job)
        if job.attempts < job.max_attempts:
            self._transition(job, "queued")
            job.error = message
        else:
            self._transition(job, "failed")
            job.error = f"attempts exhausted: {message}"
        job.assigned_worker = None
        job.current_attempt = None
        job.progress = 0.0
        self._save(job)

    def _release(self, job: Job):
        if job.assigned_worker:
            session = self._sessions.get(job.assigned_worker)
            if session is not None:
                session.in_flight.discard(job.id)

    def cancel(self, job_id: str) -> Job:
        with self._lock:
            job = self._load(job_id)
            self._transition(job, "cancelled")  # raises on terminal states
            self._release(job)
            job.assigned_worker = None
            job.current_attempt = None
            self._save(job)
        self._emit(job)
        return job

    def heartbeat_sweep(self, now: float | None = None,
                        timeout: float | None = None) -> list[str]:
        """Requeue jobs bound to workers that stopped heartbeating."""
        now = self._clock() if now is None else now
        timeout = self._timeout if timeout is None else timeout
        requeued: list[str] = []
        emitted: list[Job] = []
        with self._lock:
            for job in self.jobs():
                if job.state not in ("assigned", "running"):
                    continue
                session = self._sessions.get(job.assigned_worker or "")
                alive = session is not None and (now - session.last_heartbeat) <= timeout
                if alive:
                    continue
                self._fail_current_attempt(job, "worker heartbeat timed out")
                requeued.append(job.id)
                emitted.append(job)
        for job in emitted:
            self._emit(job)
        return requeued
