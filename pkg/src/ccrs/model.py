"""Domain types shared by every other module.

Values here are immutable after construction and safe to pass between
threads. Invariant checking is split out into `check_metadata` /
`validate_metadata` (returning violation lists) so that the wire codec can
reject bad documents while policy checks stay server-configurable.
"""

from __future__ import annotations

import enum
import os.path
import re
from dataclasses import dataclass
from typing import Final, Iterable, Union

USER_RE: Final[re.Pattern[str]] = re.compile(r"^[a-z][a-z0-9_-]*$")
MAX_USER_LENGTH: Final[int] = 32


class ContainerType(enum.Enum):
    """Container lifecycle strategy requested by job metadata.

    IMAGE_PER_JOB runs each job in its own container instantiated from an
    image file (the HPC-style model); SHARED_CONTAINER runs all jobs for one
    container specification in a single long-lived container as distinct
    internal users (the nspawn/Nix model); LOCAL_SANDBOX runs directly on the
    host in the job context with a scrubbed environment, for desk-scale
    verification.
    """

    IMAGE_PER_JOB = "image-per-job"
    SHARED_CONTAINER = "shared-container"
    LOCAL_SANDBOX = "local-sandbox"


class EventKind(enum.Enum):
    """Kind discriminant for job event stream elements."""

    STDOUT = "stdout"
    STDERR = "stderr"
    EXIT = "exit"
    NOTICE = "notice"
    ERROR = "error"


TERMINAL_KINDS: Final[frozenset[EventKind]] = frozenset({EventKind.EXIT, EventKind.ERROR})


@dataclass(frozen=True)
class MountSpec:
    """A host directory mounted into the container."""

    host_path: str
    container_path: str
    read_only: bool = False


@dataclass(frozen=True)
class JobMetadata:
    """The job-describing record a client submits with every job.

    Optional strings are `None` when absent. `address` and `hostname` are
    filled in server-side from the connection; `url` is filled in by the
    browser client from the page location.
    """

    container_type: ContainerType
    user: str
    shell: str | None = None
    container_id: str | None = None
    image: str | None = None
    binds: tuple[MountSpec, ...] = ()
    overlay: str | None = None
    address: str | None = None
    hostname: str | None = None
    url: str | None = None


@dataclass(frozen=True)
class JobEvent:
    """One element of a job's output stream.

    `seq` is assigned by the event producer and is strictly increasing with
    no gaps within a single run; exactly one EXIT (or terminal ERROR) event
    ends a run. `payload` is bytes for stdout/stderr, the integer exit code
    for exit, and a message string for notice/error.
    """

    job_id: str
    seq: int
    kind: EventKind
    payload: Union[bytes, int, str]
    timestamp_ms: int

    @property
    def is_terminal(self) -> bool:
        return self.kind in TERMINAL_KINDS


def check_metadata(meta: JobMetadata) -> list[str]:
    """Return the list of type-invariant violations in `meta` (empty = ok)."""
    violations: list[str] = []
    if not isinstance(meta.user, str) or not meta.user:
        violations.append("user is empty")
    elif len(meta.user) > MAX_USER_LENGTH:
        violations.append(f"user longer than {MAX_USER_LENGTH} chars")
    elif not USER_RE.match(meta.user):
        violations.append("user fails pattern")
    if meta.container_type is ContainerType.IMAGE_PER_JOB and not meta.image:
        violations.append("image required for image-per-job container type")
    if meta.container_type is ContainerType.SHARED_CONTAINER and not (
        meta.container_id or meta.image
    ):
        violations.append("shared-container requires containerId or image")
    seen: set[str] = set()
    for bind in meta.binds:
        if not os.path.isabs(bind.host_path):
            violations.append(f"bind hostPath not absolute: {bind.host_path}")
        if not os.path.isabs(bind.container_path):
            violations.append(f"bind containerPath not absolute: {bind.container_path}")
        if bind.container_path in seen:
            violations.append(f"duplicate bind containerPath: {bind.container_path}")
        seen.add(bind.container_path)
    return violations


@dataclass(frozen=True)
class ServerPolicy:
    """Server-side acceptance policy applied on top of the type invariants.

    `image_allow_list` of None means any image is acceptable (desk use);
    an empty `allowed_bind_roots` means no extra binds are accepted at all.
    """

    allowed_bind_roots: tuple[str, ...] = ()
    image_allow_list: tuple[str, ...] | None = None
    enabled_backends: frozenset[ContainerType] = frozenset(ContainerType)


def _under_root(path: str, roots: Iterable[str]) -> bool:
    norm = os.path.normpath(path)
    for root in roots:
        root = os.path.normpath(root)
        if norm == root or norm.startswith(root.rstrip("/") + "/"):
            return True
    return False


def validate_metadata(meta: JobMetadata, policy: ServerPolicy) -> list[str]:
    """Check type invariants plus server policy; violations come back as
    values rather than exceptions so callers can report them all at once."""
    violations = check_metadata(meta)
    if meta.container_type not in policy.enabled_backends:
        violations.append(f"container type not enabled: {meta.container_type.value}")
    if meta.image is not None and policy.image_allow_list is not None:
        if meta.image not in policy.image_allow_list:
            violations.append(f"image not on allow-list: {meta.image}")
    for bind in meta.binds:
        if os.path.isabs(bind.host_path) and not _under_root(
            bind.host_path, policy.allowed_bind_roots
        ):
            violations.append(f"bind outside allowed root: {bind.host_path}")
    return violations
