"""Child-process supervision with resource limits and event streaming.

`ProcessExecutor` launches a fully-resolved command, forwards stdout/stderr
to a `JobEvent` sink in arrival order, and enforces wall-clock, CPU, memory,
output-size, context-size, and process-count limits. Breaching any limit
kills the whole process tree, emits one ``notice`` naming the limit, and
ends the stream with ``exit`` code 137 (the conventional signal-kill code).

`MockExecutor` records every spawned `CommandSpec` and replays scripted
events through the sink, which is how backend command construction is
tested bit-exactly without any container runtime installed.
"""

from __future__ import annotations

import logging
import os
import re
import resource
import signal
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Final, Iterable, Mapping, Protocol, Sequence, Union

from ccrs.ids import now_ms
from ccrs.model import EventKind, JobEvent

log = logging.getLogger("ccrs.executor")

CHUNK_SIZE: Final[int] = 64 * 1024
KILL_EXIT_CODE: Final[int] = 137
GRACE_SECONDS: Final[float] = 0.5
_POLL_SECONDS: Final[float] = 0.05
_CONTEXT_POLL_EVERY: Final[int] = 5  # watchdog ticks between context-size scans

KILLED_NOTICE_RE: Final[re.Pattern[str]] = re.compile(r"^killed\((?P<reason>.+)\)$")

EventSink = Callable[[JobEvent], None]
Clock = Callable[[], int]


class ExecutorError(Exception):
    """Base class for executor failures."""


class SpawnFailed(ExecutorError):
    """The child process could not be started (missing binary, permission)."""


class ContextMissing(ExecutorError):
    """The working directory for the command does not exist."""


@dataclass(frozen=True)
class CommandSpec:
    """A fully-resolved process invocation.

    The child runs with `working_dir` as CWD and exactly `env` as its
    environment; nothing is inherited from the service process.
    """

    argv: tuple[str, ...]
    working_dir: str
    env: Mapping[str, str] = field(default_factory=dict)
    stdin: bytes = b""

    def __post_init__(self) -> None:
        if not self.argv or not self.argv[0]:
            raise ValueError("argv must be non-empty with a non-empty argv[0]")


_MIB = 1024 * 1024


@dataclass(frozen=True)
class ExecutionLimits:
    """Resource caps applied to one job execution.

    Defaults bound a student job on an education service: 60 s wall clock,
    30 s CPU, 512 MiB memory, 4 MiB output, 64 MiB of context files, and 64
    processes. All are per-site overridable.
    """

    wall_clock_ttl: float = 60.0
    cpu_time: float = 30.0
    memory_bytes: int = 512 * _MIB
    max_output_bytes: int = 4 * _MIB
    max_context_bytes: int = 64 * _MIB
    max_processes: int = 64

    def __post_init__(self) -> None:
        if self.wall_clock_ttl < 1.0:
            raise ValueError("wall_clock_ttl must be at least 1 second")
        for name in ("cpu_time", "memory_bytes", "max_output_bytes",
                     "max_context_bytes", "max_processes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


class ExecutionHandle:
    """Live view of one execution; terminal states are final."""

    def __init__(self, job_id: str, started_at_ms: int):
        self.job_id = job_id
        self.started_at_ms = started_at_ms
        self._lock = threading.Lock()
        self._state = "running"
        self._exit_code: int | None = None
        self._kill_reason: str | None = None
        self._done = threading.Event()

    @property
    def state(self) -> str:
        """One of "running", "exited", "killed"."""
        with self._lock:
            return self._state

    @property
    def exit_code(self) -> int | None:
        with self._lock:
            return self._exit_code

    @property
    def kill_reason(self) -> str | None:
        with self._lock:
            return self._kill_reason

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the execution reaches a terminal state."""
        return self._done.wait(timeout)

    def _finish_exited(self, code: int) -> None:
        with self._lock:
            if self._state == "running":
                self._state = "exited"
                self._exit_code = code
        self._done.set()

    def _finish_killed(self, reason: str) -> None:
        with self._lock:
            if self._state == "running":
                self._state = "killed"
                self._kill_reason = reason
                self._exit_code = KILL_EXIT_CODE
        self._done.set()


class Executor(Protocol):
    """Launches commands and kills running executions."""

    def spawn(
        self,
        spec: CommandSpec,
        limits: ExecutionLimits,
        job_id: str,
        sink: EventSink,
    ) -> ExecutionHandle: ...

    def kill(self, handle: ExecutionHandle, reason: str) -> None: ...


class _Emitter:
    """Serializes event emission for one run: gapless seq, one terminal."""

    def __init__(self, job_id: str, sink: EventSink, clock: Clock):
        self._job_id = job_id
        self._sink = sink
        self._clock = clock
        self._lock = threading.Lock()
        self._seq = 0
        self._terminal_sent = False
        self._suppress_output = False

    def emit(self, kind: EventKind, payload: Union[bytes, int, str]) -> bool:
        with self._lock:
            if self._terminal_sent:
                return False
            if self._suppress_output and kind in (EventKind.STDOUT, EventKind.STDERR):
                return False
            event = JobEvent(self._job_id, self._seq, kind, payload, self._clock())
            self._seq += 1
            if kind in (EventKind.EXIT, EventKind.ERROR):
                self._terminal_sent = True
        try:
            self._sink(event)
        except Exception:  # a broken sink must not wedge the supervisor
            log.exception("event sink failed for job %s", self._job_id)
        return True

    def suppress_output(self) -> None:
        with self._lock:
            self._suppress_output = True


class _Run:
    """Supervisor state for one spawned process."""

    def __init__(
        self,
        proc: subprocess.Popen,
        handle: ExecutionHandle,
        emitter: _Emitter,
        limits: ExecutionLimits,
        context_dir: str,
    ):
        self.proc = proc
        self.handle = handle
        self.emitter = emitter
        self.limits = limits
        self.context_dir = context_dir
        self.lock = threading.Lock()
        self.kill_reason: str | None = None
        self.kill_requested = False
        self.delivered_bytes = 0

    def request_kill(self, reason: str) -> None:
        """First caller's reason wins; suppression applies even if the
        process already exited so the delivery cap holds for fast floods."""
        with self.lock:
            if self.kill_requested:
                return
            self.kill_requested = True
            self.kill_reason = reason
        self.emitter.suppress_output()
        if self.proc.poll() is None:
            try:
                os.killpg(self.proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass


def _rlimit_preexec(limits: ExecutionLimits) -> Callable[[], None]:
    cpu = max(1, int(limits.cpu_time))

    def apply() -> None:
        # Soft CPU limit raises SIGXCPU one second before the hard kill so
        # the breach is attributable.
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
        resource.setrlimit(
            resource.RLIMIT_NPROC, (limits.max_processes, limits.max_processes)
        )
        resource.setrlimit(
            resource.RLIMIT_FSIZE, (limits.max_context_bytes, limits.max_context_bytes)
        )

    return apply


def dir_size(path: str) -> int:
    """Total bytes of regular files under a directory tree."""
    total = 0
    for root, _dirs, files in os.walk(path, onerror=lambda e: None):
        for name in files:
            try:
                total += os.lstat(os.path.join(root, name)).st_size
            except OSError:
                continue
    return total


class ProcessExecutor:
    """Runs commands as supervised child processes on the host."""

    def __init__(self, clock: Clock | None = None):
        self._clock = clock or now_ms
        self._runs: dict[int, _Run] = {}
        self._runs_lock = threading.Lock()

    def spawn(
        self,
        spec: CommandSpec,
        limits: ExecutionLimits,
        job_id: str,
        sink: EventSink,
    ) -> ExecutionHandle:
        """Start the command and stream its output as JobEvents.

        Returns immediately; supervision happens on background threads. The
        terminal event is exactly one ``exit`` (or ``error`` if the spawn
        itself failed after setup).
        """
        if not os.path.isdir(spec.working_dir):
            raise ContextMissing(f"working directory missing: {spec.working_dir}")
        try:
            proc = subprocess.Popen(
                spec.argv,
                cwd=spec.working_dir,
                env=dict(spec.env),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
                preexec_fn=_rlimit_preexec(limits),
            )
        except FileNotFoundError as exc:
            raise SpawnFailed(f"binary not found: {spec.argv[0]}") from exc
        except PermissionError as exc:
            raise SpawnFailed(f"permission denied: {spec.argv[0]}") from exc
        except (OSError, subprocess.SubprocessError) as exc:
            raise SpawnFailed(str(exc)) from exc

        handle = ExecutionHandle(job_id, self._clock())
        emitter = _Emitter(job_id, sink, self._clock)
        run = _Run(proc, handle, emitter, limits, spec.working_dir)
        with self._runs_lock:
            self._runs[id(handle)] = run

        threading.Thread(
            target=self._feed_stdin, args=(run, spec.stdin), daemon=True
        ).start()
        readers = [
            threading.Thread(
                target=self._pump, args=(run, proc.stdout, EventKind.STDOUT), daemon=True
            ),
            threading.Thread(
                target=self._pump, args=(run, proc.stderr, EventKind.STDERR), daemon=True
            ),
        ]
        for reader in readers:
            reader.start()
        threading.Thread(target=self._watchdog, args=(run,), daemon=True).start()
        threading.Thread(
            target=self._supervise, args=(run, readers), daemon=True
        ).start()
        return handle

    def kill(self, handle: ExecutionHandle, reason: str) -> None:
        """Terminate a running execution; idempotent, safe from any thread."""
        with self._runs_lock:
            run = self._runs.get(id(handle))
        if run is None or handle.state != "running":
            return
        run.request_kill(reason)

    # -- worker threads ---------------------------------------------------

    def _feed_stdin(self, run: _Run, data: bytes) -> None:
        try:
            if data:
                run.proc.stdin.write(data)
            run.proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass

    def _pump(self, run: _Run, pipe, kind: EventKind) -> None:
        fd = pipe.fileno()
        while True:
            try:
                chunk = os.read(fd, CHUNK_SIZE)
            except OSError:
                break
            if not chunk:
                break
            if run.emitter.emit(kind, chunk):
                with run.lock:
                    run.delivered_bytes += len(chunk)
                    over = run.delivered_bytes > run.limits.max_output_bytes
                if over:
                    run.request_kill("output-limit")
        try:
            pipe.close()
        except OSError:
            pass

    def _watchdog(self, run: _Run) -> None:
        deadline = time.monotonic() + run.limits.wall_clock_ttl
        tick = 0
        while run.proc.poll() is None:
            if time.monotonic() >= deadline:
                run.request_kill("wall-clock")
                return
            tick += 1
            if tick % _CONTEXT_POLL_EVERY == 0:
                if dir_size(run.context_dir) > run.limits.max_context_bytes:
                    run.request_kill("context-limit")
                    return
            time.sleep(_POLL_SECONDS)

    def _supervise(self, run: _Run, readers: Sequence[threading.Thread]) -> None:
        code = run.proc.wait()
        for reader in readers:
            reader.join()
        with run.lock:
            reason = run.kill_reason
        if reason is None and code == -signal.SIGXCPU:
            reason = "cpu"
        if reason is not None:
            run.handle._finish_killed(reason)
            run.emitter.emit(EventKind.NOTICE, f"killed({reason})")
            run.emitter.emit(EventKind.EXIT, KILL_EXIT_CODE)
        else:
            exit_code = 128 - code if code < 0 else code
            run.handle._finish_exited(exit_code)
            run.emitter.emit(EventKind.EXIT, exit_code)
        with self._runs_lock:
            self._runs.pop(id(run.handle), None)


ScriptEvent = tuple  # (kind name, payload)


class MockExecutor:
    """Records every CommandSpec and replays scripted events synchronously.

    Scripts are queues of ``(kind, payload)`` pairs, e.g.
    ``[("stdout", b"ok"), ("exit", 0)]``; a script without a terminal event
    gets ``("exit", 0)`` appended. With no script queued the default script
    applies.
    """

    def __init__(self, clock: Clock | None = None):
        self._clock = clock or now_ms
        self.recorded: list[CommandSpec] = []
        self._scripts: deque[list[ScriptEvent]] = deque()
        self.default_script: list[ScriptEvent] = [("exit", 0)]
        self._lock = threading.Lock()

    def push_script(self, events: Iterable[ScriptEvent]) -> None:
        """Queue the event script for the next spawn."""
        with self._lock:
            self._scripts.append(list(events))

    def spawn(
        self,
        spec: CommandSpec,
        limits: ExecutionLimits,
        job_id: str,
        sink: EventSink,
    ) -> ExecutionHandle:
        with self._lock:
            self.recorded.append(spec)
            script = self._scripts.popleft() if self._scripts else list(self.default_script)
        if not any(kind in ("exit", "error") for kind, _ in script):
            script.append(("exit", 0))
        handle = ExecutionHandle(job_id, self._clock())
        emitter = _Emitter(job_id, sink, self._clock)
        exit_code = 0
        for kind_name, payload in script:
            kind = EventKind(kind_name)
            emitter.emit(kind, payload)
            if kind is EventKind.EXIT:
                exit_code = int(payload)
                break
            if kind is EventKind.ERROR:
                handle._finish_killed(str(payload))
                return handle
        handle._finish_exited(exit_code)
        return handle

    def kill(self, handle: ExecutionHandle, reason: str) -> None:
        # Mock runs complete inside spawn, so kill is always a no-op ack.
        return None
