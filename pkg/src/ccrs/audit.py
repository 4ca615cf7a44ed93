"""Structured, job-ID-keyed audit logging.

Every lifecycle step of every job lands here as one JSON line, keyed by the
job ID so an operator can join a spooled job context back to what the job
did — the forensic trail for investigating a malicious or broken job. The
writer is serialized and flushed per record; logging failures are counted,
never surfaced into job execution.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional

from ccrs.ids import now_ms

log = logging.getLogger("ccrs.audit")

EVENTS = frozenset(
    {
        "job.created",
        "job.spawned",
        "job.exited",
        "job.killed",
        "gc.context",
        "gc.container",
        "gc.user",
        "site.disabled",
        "auth.rejected",
        "internal.error",
    }
)

SEVERITIES = ("info", "warn", "error")

DEFAULT_ROTATE_BYTES = 16 * 1024 * 1024


class UnknownJob(Exception):
    """No audit records exist for this job id."""


@dataclass(frozen=True)
class AuditRecord:
    """One audit event; job-scoped events always carry the job id."""

    timestamp_ms: int
    event: str
    severity: str = "info"
    job_id: Optional[str] = None
    site_id: Optional[str] = None
    detail: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.event not in EVENTS:
            raise ValueError(f"unknown audit event: {self.event}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity: {self.severity}")
        if self.event.startswith("job.") and not self.job_id:
            raise ValueError(f"{self.event} requires a job id")


def _to_line(record: AuditRecord) -> str:
    doc: dict = {
        "ts": record.timestamp_ms,
        "severity": record.severity,
        "event": record.event,
    }
    if record.job_id is not None:
        doc["jobId"] = record.job_id
    if record.site_id is not None:
        doc["siteId"] = record.site_id
    if record.detail:
        doc["detail"] = {k: str(v) for k, v in record.detail.items()}
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def _from_line(line: str) -> Optional[AuditRecord]:
    try:
        doc = json.loads(line)
        return AuditRecord(
            timestamp_ms=doc["ts"],
            event=doc["event"],
            severity=doc.get("severity", "info"),
            job_id=doc.get("jobId"),
            site_id=doc.get("siteId"),
            detail=doc.get("detail", {}),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None


class AuditLog:
    """Append-only JSON-lines log with one level of size-based rotation."""

    def __init__(
        self,
        path: str,
        rotate_bytes: int = DEFAULT_ROTATE_BYTES,
        clock=now_ms,
    ):
        if rotate_bytes <= 0:
            raise ValueError("rotate_bytes must be strictly positive")
        self._path = path
        self._rotated_path = f"{path}.1"
        self._rotate_bytes = rotate_bytes
        self._clock = clock
        self._lock = threading.Lock()
        self.failures = 0
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)

    def record(
        self,
        event: str,
        *,
        severity: str = "info",
        job_id: Optional[str] = None,
        site_id: Optional[str] = None,
        detail: Optional[Mapping[str, str]] = None,
    ) -> AuditRecord:
        """Validate, serialize, and durably append one record.

        Write failures increment `failures` and are logged, never raised:
        audit trouble must not take down job execution.
        """
        record = AuditRecord(
            timestamp_ms=self._clock(),
            event=event,
            severity=severity,
            job_id=job_id,
            site_id=site_id,
            detail=dict(detail or {}),
        )
        line = _to_line(record)
        with self._lock:
            try:
                self._rotate_if_needed()
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            except OSError:
                self.failures += 1
                log.exception("audit write failed (%d so far)", self.failures)
        return record

    def _rotate_if_needed(self) -> None:
        try:
            if os.path.getsize(self._path) >= self._rotate_bytes:
                os.replace(self._path, self._rotated_path)
        except FileNotFoundError:
            pass

    def query(self, job_id: str) -> list[AuditRecord]:
        """All records for one job, oldest first, across the rotation pair."""
        records: list[AuditRecord] = []
        with self._lock:
            for path in (self._rotated_path, self._path):
                try:
                    with open(path, "r", encoding="utf-8") as fh:
                        lines = fh.readlines()
                except OSError:
                    continue
                for line in lines:
                    record = _from_line(line)
                    if record is not None and record.job_id == job_id:
                        records.append(record)
        if not records:
            raise UnknownJob(job_id)
        records.sort(key=lambda r: r.timestamp_ms)
        return records


class NullAuditLog:
    """Drop-in stand-in that records nothing (used when auditing is off)."""

    failures = 0

    def record(self, event: str, **kwargs) -> None:
        return None

    def query(self, job_id: str) -> list[AuditRecord]:
        raise UnknownJob(job_id)
