"""Container lifecycle strategies behind every job execution.

Three strategies share one interface:

* ``IMAGE_PER_JOB`` — each job gets its own container instance from a named
  image (``singularity exec``), isolated with ``--containall``, running as a
  per-site host user.
* ``SHARED_CONTAINER`` — all jobs for one container specification share a
  single long-lived machine; jobs enter it (``systemd-run --machine``) as
  per-user accounts created inside the container.
* ``LOCAL_SANDBOX`` — plain host process with a scrubbed environment and
  rlimits only; the zero-dependency development and CI backend.

`BackendManager.prepare` materializes the per-user / per-spec state a job
needs and records it in `BackendAccounting`; `build_command` turns the
prepared environment plus metadata into the exact argv to run (tested
bit-exactly against golden files); `gc` reclaims idle containers and stale
users, never touching anything a live job references.

The job context is always mounted at ``/work`` inside containerized
backends. Actual user/container provisioning shells out through injectable
hooks so tests (and hosts without container runtimes) run against no-op
stand-ins.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from ccrs.ids import now_ms
from ccrs.executor import CommandSpec
from ccrs.model import ContainerType, JobMetadata, MountSpec
from ccrs.sites import derive_host_user

WORK_DIR = "/work"
DEFAULT_SHELL = "bash"
CONTAINER_HANDLE_PREFIX = "ccrs-"
_HANDLE_MAX_LENGTH = 48

# Minimal, deterministic environment handed to every spawned command; job
# code must not observe service-process variables.
BASE_ENV = {
    "PATH": "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin",
    "LANG": "C.UTF-8",
}

SECONDS_PER_DAY = 86_400.0


class BackendError(Exception):
    """Base class for backend failures."""


class UserProvisionFailed(BackendError):
    """The host or in-container user account could not be created."""


class ContainerStartFailed(BackendError):
    """The shared container for a spec could not be started."""


class ImageMissing(BackendError):
    """The metadata names no image for a backend that requires one."""


class UnsupportedBackend(BackendError):
    """No command builder exists for this container type."""


@dataclass(frozen=True)
class PreparedEnvironment:
    """Everything `build_command` needs that `prepare` had to materialize."""

    backend_kind: ContainerType
    context_mount: MountSpec
    host_user: Optional[str] = None
    container_handle: Optional[str] = None
    image_ref: Optional[str] = None

    def __post_init__(self) -> None:
        if self.context_mount.container_path != WORK_DIR:
            raise ValueError(f"context must mount at {WORK_DIR}")
        if self.backend_kind is ContainerType.IMAGE_PER_JOB and not self.host_user:
            raise ValueError("image-per-job environments need a host user")
        if (
            self.backend_kind is ContainerType.SHARED_CONTAINER
            and not self.container_handle
        ):
            raise ValueError("shared-container environments need a container handle")


@dataclass(frozen=True)
class GcPolicy:
    """TTLs for reclaiming backend state (seconds)."""

    container_idle_ttl: float = 3600.0
    user_ttl: float = 30 * SECONDS_PER_DAY

    def __post_init__(self) -> None:
        if self.container_idle_ttl <= 0 or self.user_ttl <= 0:
            raise ValueError("gc ttls must be strictly positive")


@dataclass(frozen=True)
class Reclaimed:
    """One resource released by a gc sweep."""

    kind: str  # "container" | "user"
    ref: str  # container handle or host user name
    site_id: Optional[str] = None


@dataclass
class _UserState:
    live_jobs: int = 0
    last_used_ms: int = 0


@dataclass
class _ContainerState:
    handle: str
    live_jobs: int = 0
    last_used_ms: int = 0
    users: set = field(default_factory=set)


class BackendAccounting:
    """Thread-safe ledger of users, containers, and live contexts.

    All mutation happens under one lock; the job manager and the gc sweep
    share this structure concurrently.
    """

    def __init__(self):
        self._lock = threading.Lock()
        # (site_id, host_user) -> _UserState
        self._users: dict[tuple[str, str], _UserState] = {}
        # container spec key -> _ContainerState
        self._containers: dict[str, _ContainerState] = {}
        self._contexts_live: set[str] = set()

    # -- snapshots for inspection/tests --------------------------------------

    def users_created(self, site_id: str) -> set[str]:
        with self._lock:
            return {user for (site, user) in self._users if site == site_id}

    def containers_running(self) -> dict[str, str]:
        with self._lock:
            return {key: state.handle for key, state in self._containers.items()}

    def container_users(self, spec_key: str) -> set[str]:
        with self._lock:
            state = self._containers.get(spec_key)
            return set(state.users) if state else set()

    def handle_owner(self, handle: str) -> Optional[str]:
        with self._lock:
            for key, state in self._containers.items():
                if state.handle == handle:
                    return key
        return None

    def contexts_live(self) -> set[str]:
        with self._lock:
            return set(self._contexts_live)

    # -- mutation (called by BackendManager) ----------------------------------

    def user_exists(self, site_id: str, host_user: str) -> bool:
        with self._lock:
            return (site_id, host_user) in self._users

    def user_seen(self, site_id: str, host_user: str, now_ms_: int) -> None:
        """Record use of a (provisioned) host user and open one live run."""
        with self._lock:
            state = self._users.setdefault((site_id, host_user), _UserState())
            state.live_jobs += 1
            state.last_used_ms = max(state.last_used_ms, now_ms_)

    def container_exists(self, spec_key: str) -> bool:
        with self._lock:
            return spec_key in self._containers

    def container_has_user(self, spec_key: str, user: str) -> bool:
        with self._lock:
            state = self._containers.get(spec_key)
            return state is not None and user in state.users

    def container_seen(
        self, spec_key: str, handle: str, in_container_user: str, now_ms_: int
    ) -> None:
        """Record use of a (running) shared container and open one live run."""
        with self._lock:
            state = self._containers.setdefault(spec_key, _ContainerState(handle=handle))
            state.users.add(in_container_user)
            state.live_jobs += 1
            state.last_used_ms = max(state.last_used_ms, now_ms_)

    def context_seen(self, path: str) -> None:
        with self._lock:
            self._contexts_live.add(path)

    def context_released(self, path: str) -> None:
        with self._lock:
            self._contexts_live.discard(path)

    def job_complete(self, env: PreparedEnvironment, site_id: str, now_ms_: int) -> None:
        with self._lock:
            if env.host_user is not None:
                state = self._users.get((site_id, env.host_user))
                if state is not None:
                    state.live_jobs = max(0, state.live_jobs - 1)
                    state.last_used_ms = max(state.last_used_ms, now_ms_)
            if env.container_handle is not None:
                for cstate in self._containers.values():
                    if cstate.handle == env.container_handle:
                        cstate.live_jobs = max(0, cstate.live_jobs - 1)
                        cstate.last_used_ms = max(cstate.last_used_ms, now_ms_)

    def sweep(self, policy: GcPolicy, now_ms_: int) -> list[Reclaimed]:
        """Drop idle containers and stale users; live resources survive."""
        reclaimed: list[Reclaimed] = []
        with self._lock:
            idle_cutoff = now_ms_ - int(policy.container_idle_ttl * 1000)
            for key in sorted(self._containers):
                state = self._containers[key]
                if state.live_jobs == 0 and state.last_used_ms <= idle_cutoff:
                    del self._containers[key]
                    reclaimed.append(Reclaimed(kind="container", ref=state.handle))
            user_cutoff = now_ms_ - int(policy.user_ttl * 1000)
            for key in sorted(self._users):
                state = self._users[key]
                if state.live_jobs == 0 and state.last_used_ms <= user_cutoff:
                    del self._users[key]
                    site_id, host_user = key
                    reclaimed.append(
                        Reclaimed(kind="user", ref=host_user, site_id=site_id)
                    )
        return reclaimed


def container_spec_key(meta: JobMetadata) -> str:
    """Identity of a shared-container specification.

    Jobs naming the same containerId (or, failing that, the same image)
    land in the same machine.
    """
    if meta.container_id:
        return f"id:{meta.container_id}"
    if meta.image:
        return f"image:{meta.image}"
    raise ImageMissing("shared-container metadata names neither containerId nor image")


def container_handle_for(spec_key: str) -> str:
    """Deterministic machine name for a container spec, safe for systemd."""
    sanitized = re.sub(r"[^a-z0-9-]+", "-", spec_key.split(":", 1)[1].lower()).strip("-")
    if len(sanitized) > _HANDLE_MAX_LENGTH:
        digest = hashlib.sha256(spec_key.encode("utf-8")).hexdigest()[:8]
        sanitized = f"{sanitized[:_HANDLE_MAX_LENGTH - 9]}-{digest}"
    return f"{CONTAINER_HANDLE_PREFIX}{sanitized}"


# Provisioning hooks: (host_user) -> None, (handle, metadata) -> None,
# (handle, user) -> None. Defaults are no-ops so development hosts and CI
# need no container runtime; live deployments inject adapters that shell
# out to useradd / the container engine.
HostUserProvisioner = Callable[[str], None]
ContainerStarter = Callable[[str, JobMetadata], None]
ContainerUserProvisioner = Callable[[str, str], None]


class BackendManager:
    """Prepares backend state for jobs and builds their commands."""

    def __init__(
        self,
        policy: GcPolicy | None = None,
        *,
        prefix_for_site: Callable[[str], str] | None = None,
        provision_host_user: HostUserProvisioner | None = None,
        start_container: ContainerStarter | None = None,
        provision_container_user: ContainerUserProvisioner | None = None,
        clock: Callable[[], int] | None = None,
    ):
        self.policy = policy or GcPolicy()
        self.accounting = BackendAccounting()
        self._prefix_for_site = prefix_for_site or (lambda site_id: site_id)
        self._provision_host_user = provision_host_user or (lambda user: None)
        self._start_container = start_container or (lambda handle, meta: None)
        self._provision_container_user = provision_container_user or (
            lambda handle, user: None
        )
        self._clock = clock or now_ms
        # Serializes provisioning per (site, user) / per spec key.
        self._prepare_lock = threading.Lock()

    # -- prepare --------------------------------------------------------------

    def prepare(
        self, meta: JobMetadata, site_id: str, context_path: str
    ) -> PreparedEnvironment:
        """Materialize per-user / per-spec state for one run.

        Idempotent per (site, user, spec): repeated calls reuse the recorded
        host user or running container and only bump accounting.
        """
        mount = MountSpec(host_path=context_path, container_path=WORK_DIR)
        now = self._clock()
        with self._prepare_lock:
            self.accounting.context_seen(context_path)
            if meta.container_type is ContainerType.IMAGE_PER_JOB:
                return self._prepare_image_per_job(meta, site_id, mount, now)
            if meta.container_type is ContainerType.SHARED_CONTAINER:
                return self._prepare_shared(meta, site_id, mount, now)
            if meta.container_type is ContainerType.LOCAL_SANDBOX:
                return PreparedEnvironment(
                    backend_kind=ContainerType.LOCAL_SANDBOX, context_mount=mount
                )
            raise UnsupportedBackend(str(meta.container_type))

    def _prepare_image_per_job(
        self, meta: JobMetadata, site_id: str, mount: MountSpec, now: int
    ) -> PreparedEnvironment:
        if not meta.image:
            raise ImageMissing("image-per-job metadata names no image")
        host_user = derive_host_user(self._prefix_for_site(site_id), meta.user)
        if not self.accounting.user_exists(site_id, host_user):
            # Provision first, commit after: a failure leaves no record, so
            # the next attempt provisions again instead of assuming success.
            try:
                self._provision_host_user(host_user)
            except Exception as exc:
                raise UserProvisionFailed(host_user) from exc
        self.accounting.user_seen(site_id, host_user, now)
        return PreparedEnvironment(
            backend_kind=ContainerType.IMAGE_PER_JOB,
            context_mount=mount,
            host_user=host_user,
            image_ref=meta.image,
        )

    def _resolve_handle(self, spec_key: str) -> str:
        # Distinct specs must never share a machine name, even when their
        # sanitized forms collide.
        handle = container_handle_for(spec_key)
        owner = self.accounting.handle_owner(handle)
        if owner is not None and owner != spec_key:
            digest = hashlib.sha256(spec_key.encode("utf-8")).hexdigest()[:8]
            handle = f"{handle[:_HANDLE_MAX_LENGTH]}-{digest}"
        return handle

    def _prepare_shared(
        self, meta: JobMetadata, site_id: str, mount: MountSpec, now: int
    ) -> PreparedEnvironment:
        spec_key = container_spec_key(meta)
        handle = self._resolve_handle(spec_key)
        if not self.accounting.container_exists(spec_key):
            try:
                self._start_container(handle, meta)
            except Exception as exc:
                raise ContainerStartFailed(handle) from exc
        if not self.accounting.container_has_user(spec_key, meta.user):
            try:
                self._provision_container_user(handle, meta.user)
            except Exception as exc:
                raise UserProvisionFailed(f"{meta.user} in {handle}") from exc
        self.accounting.container_seen(spec_key, handle, meta.user, now)
        return PreparedEnvironment(
            backend_kind=ContainerType.SHARED_CONTAINER,
            context_mount=mount,
            container_handle=handle,
            image_ref=meta.image,
        )

    # -- command construction --------------------------------------------------

    def build_command(
        self, env: PreparedEnvironment, meta: JobMetadata, user_command: str
    ) -> CommandSpec:
        """Turn a prepared environment + metadata into the exact invocation."""
        if not user_command:
            raise ValueError("user command must be non-empty")
        shell = meta.shell or DEFAULT_SHELL
        context = env.context_mount.host_path
        if env.backend_kind is ContainerType.IMAGE_PER_JOB:
            argv: list[str] = ["singularity", "exec", "--containall"]
            argv += ["--bind", f"{context}:{WORK_DIR}"]
            for bind in meta.binds:
                spec = f"{bind.host_path}:{bind.container_path}"
                if bind.read_only:
                    spec += ":ro"
                argv += ["--bind", spec]
            if meta.overlay:
                argv += ["--overlay", meta.overlay]
            argv += [env.image_ref or "", shell, "-c", user_command]
            return CommandSpec(
                argv=tuple(argv), working_dir=context, env=dict(BASE_ENV)
            )
        if env.backend_kind is ContainerType.SHARED_CONTAINER:
            argv = [
                "systemd-run",
                "--wait",
                "--pipe",
                "--machine",
                env.container_handle or "",
                "--uid",
                meta.user,
                "--property",
                f"WorkingDirectory={WORK_DIR}",
                shell,
                "-c",
                user_command,
            ]
            return CommandSpec(
                argv=tuple(argv), working_dir=context, env=dict(BASE_ENV)
            )
        if env.backend_kind is ContainerType.LOCAL_SANDBOX:
            sandbox_env = dict(BASE_ENV, HOME=context, TMPDIR=context)
            return CommandSpec(
                argv=(shell, "-c", user_command),
                working_dir=context,
                env=sandbox_env,
            )
        raise UnsupportedBackend(str(env.backend_kind))

    # -- bookkeeping -----------------------------------------------------------

    def mark_complete(self, env: PreparedEnvironment, site_id: str) -> None:
        """Record that a run using this environment has terminated."""
        self.accounting.job_complete(env, site_id, self._clock())

    def release_context(self, context_path: str) -> None:
        """Told by the job manager when a context directory is removed."""
        self.accounting.context_released(context_path)

    def gc(self, now_ms_: int | None = None) -> list[Reclaimed]:
        """Reclaim idle containers and stale users per policy.

        Resources attached to a running job are never reclaimed; failures
        here are sweep-local and simply retried on the next pass.
        """
        return self.accounting.sweep(self.policy, now_ms_ or self._clock())
