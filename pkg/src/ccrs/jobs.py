"""Job lifecycle: contexts, one-shots, editor sessions, event fan-out, GC.

Every job owns a spool directory (its *context*) whose path ends in the job
ID, created under ``spoolRoot/<siteId>/<jobId>``. One-shot jobs get a fresh
ID and context per run unless the caller passes an ID to reuse; editor
sessions keep one ID and context across file staging and repeated actions.
Contexts outlive their jobs — they are reclaimed only by the TTL sweep, so
an operator can inspect what a job wrote.

Output flows through a per-job `EventBuffer` that replays the most recent
run to any number of subscribers, supporting reconnect-from-sequence. All
state transitions are audit-logged by job ID.
"""

from __future__ import annotations

import os
import re
import shlex
import shutil
import threading
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

from ccrs.audit import NullAuditLog
from ccrs.backends import BackendManager, BackendError, PreparedEnvironment
from ccrs.executor import (
    ExecutionLimits,
    Executor,
    ExecutorError,
    KILLED_NOTICE_RE,
    dir_size,
)
from ccrs.ids import is_job_id, make_job_id, now_ms
from ccrs.model import (
    EventKind,
    JobEvent,
    JobMetadata,
    ServerPolicy,
    check_metadata,
    validate_metadata,
)


class JobError(Exception):
    """Base class for job-manager failures."""


class UnknownJob(JobError):
    """No job registered under this id."""


class NotOwner(JobError):
    """The caller's (site, user) does not own this job."""


class ValidationFailed(JobError):
    """Metadata, command, or action-set validation failed."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class QuotaExceeded(JobError):
    """The per-user cap on simultaneously running jobs is reached."""


class Busy(JobError):
    """An execution is already running on this job."""


class UnknownAction(JobError):
    """The session's action set has no action by this name."""


class PathEscape(JobError):
    """A staged file name would land outside the job context."""


class ContextQuotaExceeded(JobError):
    """Staging would push the context past its byte budget."""


ONE_SHOT = "oneShot"
SESSION = "session"

# Staged names: relative, printable, optionally nested; checked against
# escapes separately. The restricted alphabet keeps names shell-safe.
FILE_NAME_RE = re.compile(r"^[A-Za-z0-9._][A-Za-z0-9._/-]*$")
_TEMPLATE_VAR_RE = re.compile(r"\{(\w+)\}")
TEMPLATE_VARS = frozenset({"main", "files"})


@dataclass(frozen=True)
class JobPolicy:
    """Manager-wide knobs; per-site limit overrides arrive per call."""

    spool_root: str = "/tmp/ccrs"
    context_ttl: float = 24 * 3600.0
    session_ttl: float = 7 * 24 * 3600.0
    max_live_jobs_per_user: int = 4
    default_limits: ExecutionLimits = field(default_factory=ExecutionLimits)

    def __post_init__(self) -> None:
        if not os.path.isabs(self.spool_root):
            raise ValueError("spool_root must be absolute")
        if self.context_ttl <= 0 or self.session_ttl <= 0:
            raise ValueError("ttls must be strictly positive")
        if self.max_live_jobs_per_user < 1:
            raise ValueError("max_live_jobs_per_user must be at least 1")


@dataclass
class JobContext:
    """A job's spool directory and its usage timestamps."""

    job_id: str
    path: str
    created_at_ms: int
    last_used_ms: int
    mode: str  # ONE_SHOT | SESSION

    def __post_init__(self) -> None:
        if os.path.basename(self.path.rstrip("/")) != self.job_id:
            raise ValueError("context path must end with the job id")
        if self.last_used_ms < self.created_at_ms:
            raise ValueError("last_used_ms must be >= created_at_ms")


class _RunBuffer:
    __slots__ = ("events", "terminal", "next")

    def __init__(self):
        self.events: list[JobEvent] = []
        self.terminal = False
        self.next: Optional[_RunBuffer] = None


class EventBuffer:
    """Replayable event stream for the most recent run of one job.

    Subscribers attach at any sequence number; they receive the buffered
    prefix, then live events, ending with the run's terminal event. A
    subscriber that attached before the first run ever started follows the
    stream into that first run.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._current = _RunBuffer()

    def start_run(self) -> None:
        """Swap in an empty buffer for a new run."""
        with self._cond:
            old = self._current
            new = _RunBuffer()
            if not old.events and not old.terminal:
                # Nothing ever happened on the old buffer; let its waiters
                # follow into the run that is actually starting.
                old.next = new
            self._current = new
            self._cond.notify_all()

    def append(self, event: JobEvent) -> None:
        with self._cond:
            run = self._current
            if run.terminal:
                return
            run.events.append(event)
            if event.is_terminal:
                run.terminal = True
            self._cond.notify_all()

    def snapshot(self) -> list[JobEvent]:
        with self._cond:
            return list(self._current.events)

    def is_terminal(self) -> bool:
        with self._cond:
            return self._current.terminal

    def wait_terminal(self, timeout: float) -> bool:
        deadline = now_ms() + int(timeout * 1000)
        with self._cond:
            while not self._current.terminal:
                remaining = (deadline - now_ms()) / 1000.0
                if remaining <= 0:
                    return False
                self._cond.wait(timeout=remaining)
            return True

    def subscribe(self, from_seq: int = 0) -> Iterator[JobEvent]:
        """Yield events with seq >= from_seq until the terminal event."""
        with self._cond:
            run = self._current
        idx = max(0, from_seq)
        while True:
            with self._cond:
                while True:
                    if run.next is not None and not run.events and not run.terminal:
                        run = run.next
                        continue
                    if len(run.events) > idx or run.terminal:
                        break
                    self._cond.wait(timeout=0.5)
                if len(run.events) <= idx and run.terminal:
                    return
                batch = run.events[idx:]
            for event in batch:
                yield event
                if event.is_terminal:
                    return
            idx += len(batch)


@dataclass
class JobRecord:
    """Everything the manager tracks for one job."""

    job_id: str
    site_id: str
    metadata: JobMetadata
    context: JobContext
    state: str = "idle"  # idle | running | finished | failed
    exit_code: Optional[int] = None
    failure_reason: Optional[str] = None
    actions: dict = field(default_factory=dict)
    staged_files: set = field(default_factory=set)
    env: Optional[PreparedEnvironment] = None
    handle: object = None
    buffer: EventBuffer = field(default_factory=EventBuffer)
    lock: threading.Lock = field(default_factory=threading.Lock)
    removed: bool = False

    def owned_by(self, site_id: str, user: str) -> bool:
        return self.site_id == site_id and self.metadata.user == user


def validate_actions(actions: Mapping[str, str]) -> list[str]:
    """Check an action set: non-empty names, known template variables."""
    violations = []
    if not actions:
        violations.append("action set must not be empty")
    for name, template in actions.items():
        if not name or not re.match(r"^[A-Za-z][A-Za-z0-9_-]*$", name):
            violations.append(f"malformed action name: {name!r}")
        if not template or not template.strip():
            violations.append(f"empty template for action {name!r}")
            continue
        for var in _TEMPLATE_VAR_RE.findall(template):
            if var not in TEMPLATE_VARS:
                violations.append(f"unknown template variable {{{var}}} in {name!r}")
    return violations


class JobManager:
    """Owns all job state; every public method is thread-safe."""

    def __init__(
        self,
        backends: BackendManager,
        executor: Executor,
        policy: JobPolicy | None = None,
        server_policy: ServerPolicy | None = None,
        audit=None,
        clock=now_ms,
    ):
        self.policy = policy or JobPolicy()
        self.server_policy = server_policy or ServerPolicy()
        self._backends = backends
        self._executor = executor
        self._audit = audit if audit is not None else NullAuditLog()
        self._clock = clock
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    # -- helpers ---------------------------------------------------------------

    def _validate(self, meta: JobMetadata, policy: Optional[ServerPolicy] = None) -> None:
        effective = policy if policy is not None else self.server_policy
        violations = check_metadata(meta) + validate_metadata(meta, effective)
        # check_metadata runs inside validate_metadata as well; dedupe.
        seen: list[str] = []
        for v in violations:
            if v not in seen:
                seen.append(v)
        if seen:
            raise ValidationFailed(seen)

    def _count_running(self, site_id: str, user: str) -> int:
        with self._lock:
            return sum(
                1
                for r in self._jobs.values()
                if r.site_id == site_id
                and r.metadata.user == user
                and r.state == "running"
            )

    def _context_path(self, site_id: str, job_id: str) -> str:
        return os.path.join(self.policy.spool_root, site_id, job_id)

    def _create_record(
        self, meta: JobMetadata, site_id: str, job_id: str, mode: str
    ) -> JobRecord:
        now = self._clock()
        path = self._context_path(site_id, job_id)
        os.makedirs(path, exist_ok=True)
        context = JobContext(
            job_id=job_id, path=path, created_at_ms=now, last_used_ms=now, mode=mode
        )
        record = JobRecord(
            job_id=job_id, site_id=site_id, metadata=meta, context=context
        )
        with self._lock:
            self._jobs[job_id] = record
        self._audit.record(
            "job.created",
            job_id=job_id,
            site_id=site_id,
            detail={"contextPath": path, "mode": mode, "user": meta.user},
        )
        return record

    def _get_owned(
        self, job_id: str, site_id: str, user: Optional[str]
    ) -> JobRecord:
        """Look up a job the caller owns.

        `user=None` checks site ownership only: sites authenticate their own
        students, so a site may read any of its jobs, while a user-scoped
        call must also match the job's user.
        """
        with self._lock:
            record = self._jobs.get(job_id)
        if record is None or record.removed:
            raise UnknownJob(job_id)
        if record.site_id != site_id:
            raise NotOwner(job_id)
        if user is not None and record.metadata.user != user:
            raise NotOwner(job_id)
        return record

    def _start_run(
        self,
        record: JobRecord,
        command: str,
        limits: Optional[ExecutionLimits],
    ) -> EventBuffer:
        """Prepare, build, and spawn one execution on a record.

        Caller must have passed ownership checks. Spawn problems surface as
        an ``error`` terminal event in the stream rather than an exception,
        so subscribers always see a terminal.
        """
        limits = limits or self.policy.default_limits
        meta = record.metadata
        with record.lock:
            if record.removed:
                raise UnknownJob(record.job_id)
            if record.state == "running":
                raise Busy(record.job_id)
            record.state = "running"
            record.context.last_used_ms = self._clock()
            record.buffer.start_run()
        try:
            env = self._backends.prepare(meta, record.site_id, record.context.path)
        except BackendError as exc:
            self._fail_before_spawn(record, f"backend: {exc}")
            return record.buffer
        spec = self._backends.build_command(env, meta, command)
        with record.lock:
            record.env = env
        sink = self._make_sink(record)
        self._audit.record(
            "job.spawned",
            job_id=record.job_id,
            site_id=record.site_id,
            detail={"argv0": spec.argv[0], "backend": meta.container_type.value},
        )
        try:
            handle = self._executor.spawn(spec, limits, record.job_id, sink)
        except ExecutorError as exc:
            self._backends.mark_complete(env, record.site_id)
            self._fail_before_spawn(record, str(exc))
            return record.buffer
        with record.lock:
            record.handle = handle
        return record.buffer

    def _fail_before_spawn(self, record: JobRecord, reason: str) -> None:
        with record.lock:
            record.state = "failed"
            record.failure_reason = reason
        record.buffer.append(
            JobEvent(record.job_id, 0, EventKind.ERROR, reason, self._clock())
        )
        self._audit.record(
            "internal.error",
            severity="error",
            job_id=record.job_id,
            site_id=record.site_id,
            detail={"reason": reason},
        )

    def _make_sink(self, record: JobRecord):
        kill_reason: list[Optional[str]] = [None]

        def sink(event: JobEvent) -> None:
            if event.kind is EventKind.NOTICE and isinstance(event.payload, str):
                match = KILLED_NOTICE_RE.match(event.payload)
                if match:
                    kill_reason[0] = match.group("reason")
            record.buffer.append(event)
            if not event.is_terminal:
                return
            env = record.env
            with record.lock:
                record.context.last_used_ms = self._clock()
                if event.kind is EventKind.EXIT:
                    record.state = "finished"
                    record.exit_code = int(event.payload)
                else:
                    record.state = "failed"
                    record.failure_reason = str(event.payload)
            if env is not None:
                self._backends.mark_complete(env, record.site_id)
            if kill_reason[0] is not None:
                self._audit.record(
                    "job.killed",
                    severity="warn",
                    job_id=record.job_id,
                    site_id=record.site_id,
                    detail={"reason": kill_reason[0]},
                )
            else:
                self._audit.record(
                    "job.exited",
                    job_id=record.job_id,
                    site_id=record.site_id,
                    detail={"terminal": event.kind.value, "payload": str(event.payload)},
                )

        return sink

    # -- one-shot jobs -----------------------------------------------------------

    def run_one_shot(
        self,
        meta: JobMetadata,
        site_id: str,
        command: str,
        existing_id: Optional[str] = None,
        limits: Optional[ExecutionLimits] = None,
        policy: Optional[ServerPolicy] = None,
    ) -> tuple[str, EventBuffer]:
        """Run one command; returns (job id, live event buffer).

        Without `existing_id` every call gets a fresh ID and context. With
        it, the caller either reuses a context it owns or claims the ID for
        a fresh context (IDs may be allocated client-side). `policy` swaps
        in a caller-scoped acceptance policy (e.g. per-site overrides).
        """
        self._validate(meta, policy)
        if not command or not command.strip():
            raise ValidationFailed(["command must be non-empty"])
        if self._count_running(site_id, meta.user) >= self.policy.max_live_jobs_per_user:
            raise QuotaExceeded(f"{meta.user} on {site_id}")
        if existing_id is not None:
            if not is_job_id(existing_id):
                raise ValidationFailed([f"malformed job id: {existing_id!r}"])
            with self._lock:
                record = self._jobs.get(existing_id)
            if record is not None and not record.removed:
                if not record.owned_by(site_id, meta.user):
                    raise NotOwner(existing_id)
                with record.lock:
                    record.metadata = meta  # this run's settings win
            else:
                record = self._create_record(meta, site_id, existing_id, ONE_SHOT)
            job_id = existing_id
        else:
            job_id = make_job_id()
            record = self._create_record(meta, site_id, job_id, ONE_SHOT)
        buffer = self._start_run(record, command, limits)
        return job_id, buffer

    # -- editor sessions -----------------------------------------------------------

    def create_session(
        self,
        meta: JobMetadata,
        site_id: str,
        actions: Mapping[str, str],
        policy: Optional[ServerPolicy] = None,
    ) -> str:
        """Allocate a session job: ID + context + action set, no process.

        When `meta.containerId` names an existing session owned by the same
        (site, user), that session is resumed: same ID, same context.
        """
        self._validate(meta, policy)
        violations = validate_actions(actions)
        if violations:
            raise ValidationFailed(violations)
        resume_id = meta.container_id
        if resume_id is not None and is_job_id(resume_id):
            with self._lock:
                record = self._jobs.get(resume_id)
            if record is not None and not record.removed:
                if not record.owned_by(site_id, meta.user):
                    raise NotOwner(resume_id)
                if record.context.mode != SESSION:
                    raise ValidationFailed(
                        [f"job {resume_id} is not a session"]
                    )
                with record.lock:
                    record.actions = dict(actions)
                    record.context.last_used_ms = self._clock()
                return resume_id
        job_id = make_job_id()
        record = self._create_record(meta, site_id, job_id, SESSION)
        record.actions = dict(actions)
        return job_id

    def stage_files(
        self,
        job_id: str,
        files: Mapping[str, bytes],
        site_id: str,
        user: Optional[str] = None,
        limits: Optional[ExecutionLimits] = None,
    ) -> None:
        """Atomically write files into a session's context directory."""
        record = self._get_owned(job_id, site_id, user)
        if record.context.mode != SESSION:
            raise ValidationFailed([f"job {job_id} is not a session"])
        limits = limits or self.policy.default_limits
        root = os.path.realpath(record.context.path)
        staged: list[tuple[str, str, bytes]] = []
        incoming = 0
        for name, data in files.items():
            if not FILE_NAME_RE.match(name) or ".." in name.split("/"):
                raise PathEscape(name)
            target = os.path.realpath(os.path.join(root, name))
            if target != root and not target.startswith(root + os.sep):
                raise PathEscape(name)
            incoming += len(data)
            staged.append((name, target, data))
        current = dir_size(root)
        if current + incoming > limits.max_context_bytes:
            raise ContextQuotaExceeded(
                f"{current + incoming} bytes > {limits.max_context_bytes}"
            )
        with record.lock:
            if record.removed:
                raise UnknownJob(job_id)
            for name, target, data in staged:
                os.makedirs(os.path.dirname(target), exist_ok=True)
                tmp = f"{target}.staging"
                with open(tmp, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
                record.staged_files.add(name)
            record.context.last_used_ms = self._clock()

    def run_action(
        self,
        job_id: str,
        action_name: str,
        site_id: str,
        user: Optional[str] = None,
        limits: Optional[ExecutionLimits] = None,
    ) -> EventBuffer:
        """Expand a session action's template against staged files and run it."""
        record = self._get_owned(job_id, site_id, user)
        if record.context.mode != SESSION:
            raise ValidationFailed([f"job {job_id} is not a session"])
        with record.lock:
            template = record.actions.get(action_name)
            staged = sorted(record.staged_files)
        if template is None:
            raise UnknownAction(action_name)
        command = self._expand_template(template, staged)
        owner = record.metadata.user
        if self._count_running(site_id, owner) >= self.policy.max_live_jobs_per_user:
            raise QuotaExceeded(f"{owner} on {site_id}")
        return self._start_run(record, command, limits)

    @staticmethod
    def _expand_template(template: str, staged: list[str]) -> str:
        command = template
        if "{main}" in command:
            if not staged:
                raise ValidationFailed(["{main} used but no files staged"])
            command = command.replace("{main}", staged[0])
        if "{files}" in command:
            command = command.replace("{files}", " ".join(shlex.quote(f) for f in staged))
        if not command.strip():
            raise ValidationFailed(["action expanded to an empty command"])
        return command

    # -- subscription -----------------------------------------------------------

    def subscribe(
        self, job_id: str, from_seq: int, site_id: str, user: Optional[str] = None
    ) -> Iterator[JobEvent]:
        record = self._get_owned(job_id, site_id, user)
        return record.buffer.subscribe(from_seq)

    def get_record(
        self, job_id: str, site_id: str, user: Optional[str] = None
    ) -> JobRecord:
        return self._get_owned(job_id, site_id, user)

    # -- teardown ---------------------------------------------------------------

    def kill_site_jobs(self, site_id: str, reason: str = "site-disabled") -> int:
        """Kill every running job of one site; returns the count killed."""
        with self._lock:
            running = [
                r
                for r in self._jobs.values()
                if r.site_id == site_id and r.state == "running"
            ]
        for record in running:
            handle = record.handle
            if handle is not None:
                self._executor.kill(handle, reason)
        if running:
            self._audit.record(
                "site.disabled", site_id=site_id, detail={"killed": str(len(running))}
            )
        return len(running)

    def gc_sweep(self, now: Optional[int] = None) -> list[str]:
        """Remove contexts idle past their TTL; returns removed paths."""
        now = now if now is not None else self._clock()
        removed: list[str] = []
        with self._lock:
            candidates = list(self._jobs.values())
        for record in candidates:
            ttl = (
                self.policy.session_ttl
                if record.context.mode == SESSION
                else self.policy.context_ttl
            )
            cutoff = now - int(ttl * 1000)
            with record.lock:
                if record.removed or record.state == "running":
                    continue
                if record.context.last_used_ms > cutoff:
                    continue
                record.removed = True
            shutil.rmtree(record.context.path, ignore_errors=True)
            self._backends.release_context(record.context.path)
            with self._lock:
                self._jobs.pop(record.job_id, None)
            removed.append(record.context.path)
            self._audit.record(
                "gc.context",
                job_id=record.job_id,
                site_id=record.site_id,
                detail={"path": record.context.path},
            )
        return removed

    # -- introspection ------------------------------------------------------------

    def job_count(self) -> int:
        with self._lock:
            return len(self._jobs)

    def running_count(self) -> int:
        with self._lock:
            return sum(1 for r in self._jobs.values() if r.state == "running")
