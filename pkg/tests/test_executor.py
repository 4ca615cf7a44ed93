"""Process supervision: streaming, limits, kills, and the recording mock."""

import os
import threading
import time

import pytest

from ccrs.executor import (
    CHUNK_SIZE,
    KILL_EXIT_CODE,
    CommandSpec,
    ContextMissing,
    ExecutionLimits,
    MockExecutor,
    ProcessExecutor,
    SpawnFailed,
)
from ccrs.model import EventKind


class Collector:
    """Thread-safe event sink that can wait for the terminal event."""

    def __init__(self):
        self.events = []
        self._lock = threading.Lock()
        self._done = threading.Event()

    def __call__(self, event):
        with self._lock:
            self.events.append(event)
        if event.is_terminal:
            self._done.set()

    def wait(self, timeout=15.0):
        assert self._done.wait(timeout), "no terminal event arrived"
        with self._lock:
            return list(self.events)

    def snapshot(self):
        with self._lock:
            return list(self.events)


def sh(command: str, cwd: str, stdin: bytes = b"") -> CommandSpec:
    return CommandSpec(
        argv=("/bin/sh", "-c", command),
        working_dir=cwd,
        env={"PATH": "/usr/bin:/bin"},
        stdin=stdin,
    )


GENEROUS = ExecutionLimits()


@pytest.fixture
def executor():
    return ProcessExecutor()


def stdout_bytes(events) -> bytes:
    return b"".join(e.payload for e in events if e.kind is EventKind.STDOUT)


def test_echo_streams_stdout_and_exit_zero(executor, tmp_path):
    sink = Collector()
    spec = CommandSpec(argv=("/bin/echo", "hi"), working_dir=str(tmp_path), env={})
    executor.spawn(spec, GENEROUS, "job1", sink)
    events = sink.wait()
    assert stdout_bytes(events) == b"hi\n"
    assert events[-1].kind is EventKind.EXIT and events[-1].payload == 0


def test_seq_is_gapless_and_terminal_is_last(executor, tmp_path):
    sink = Collector()
    executor.spawn(sh("seq 1 2000; echo err >&2", str(tmp_path)), GENEROUS, "job2", sink)
    events = sink.wait()
    assert [e.seq for e in events] == list(range(len(events)))
    assert events[-1].is_terminal
    assert sum(1 for e in events if e.is_terminal) == 1


def test_child_env_contains_exactly_what_was_given(executor, tmp_path):
    sink = Collector()
    spec = CommandSpec(
        argv=("/usr/bin/env",),
        working_dir=str(tmp_path),
        env={"ONLY_THIS": "1", "PATH": "/usr/bin:/bin"},
    )
    executor.spawn(spec, GENEROUS, "job3", sink)
    events = sink.wait()
    lines = sorted(stdout_bytes(events).decode().strip().splitlines())
    assert lines == ["ONLY_THIS=1", "PATH=/usr/bin:/bin"]


def test_working_dir_is_cwd(executor, tmp_path):
    sink = Collector()
    executor.spawn(sh("pwd", str(tmp_path)), GENEROUS, "job4", sink)
    events = sink.wait()
    assert stdout_bytes(events).decode().strip() == str(tmp_path)


def test_stdin_is_fed_and_closed(executor, tmp_path):
    sink = Collector()
    executor.spawn(sh("cat", str(tmp_path), stdin=b"ping\n"), GENEROUS, "job5", sink)
    events = sink.wait()
    assert stdout_bytes(events) == b"ping\n"


def test_nonzero_exit_code_reported(executor, tmp_path):
    sink = Collector()
    executor.spawn(sh("exit 3", str(tmp_path)), GENEROUS, "job6", sink)
    events = sink.wait()
    assert events[-1].payload == 3


def test_wall_clock_ttl_kills_within_grace(executor, tmp_path):
    sink = Collector()
    limits = ExecutionLimits(wall_clock_ttl=2.0)
    start = time.monotonic()
    handle = executor.spawn(
        sh("while true; do :; done", str(tmp_path)), limits, "job7", sink
    )
    events = sink.wait(timeout=10)
    elapsed = time.monotonic() - start
    assert elapsed < 2.0 + 0.5 + 1.0  # ttl + grace + measurement slack
    notices = [e for e in events if e.kind is EventKind.NOTICE]
    assert notices and notices[-1].payload == "killed(wall-clock)"
    assert events[-1].kind is EventKind.EXIT and events[-1].payload == KILL_EXIT_CODE
    assert handle.state == "killed" and handle.kill_reason == "wall-clock"


def test_output_cap_bounds_delivery(executor, tmp_path):
    cap = 1024 * 1024
    sink = Collector()
    limits = ExecutionLimits(max_output_bytes=cap)
    executor.spawn(sh("yes", str(tmp_path)), limits, "job8", sink)
    events = sink.wait(timeout=30)
    delivered = len(stdout_bytes(events))
    assert delivered <= cap + CHUNK_SIZE
    notices = [e.payload for e in events if e.kind is EventKind.NOTICE]
    assert "killed(output-limit)" in notices
    assert events[-1].payload == KILL_EXIT_CODE


def test_fast_flood_that_exits_is_still_bounded(executor, tmp_path):
    # The process finishes before the readers drain; delivery must still obey
    # the cap and the breach must be named.
    cap = 64 * 1024
    sink = Collector()
    limits = ExecutionLimits(max_output_bytes=cap)
    executor.spawn(
        sh("head -c 4194304 /dev/zero", str(tmp_path)), limits, "job9", sink
    )
    events = sink.wait(timeout=30)
    assert len(stdout_bytes(events)) <= cap + CHUNK_SIZE
    notices = [e.payload for e in events if e.kind is EventKind.NOTICE]
    assert "killed(output-limit)" in notices


def test_context_limit_kills_writer(executor, tmp_path):
    # Grow the working directory across many files; the single-file rlimit
    # alone cannot contain that, so the directory scan must catch it.
    sink = Collector()
    limits = ExecutionLimits(max_context_bytes=256 * 1024)
    script = "i=0; while true; do head -c 65536 /dev/zero > f$i; i=$((i+1)); sleep 0.01; done"
    executor.spawn(sh(script, str(tmp_path)), limits, "job10", sink)
    events = sink.wait(timeout=30)
    notices = [e.payload for e in events if e.kind is EventKind.NOTICE]
    assert notices == ["killed(context-limit)"]
    assert events[-1].payload == KILL_EXIT_CODE


def test_cpu_limit_breach_is_attributed(executor, tmp_path):
    sink = Collector()
    limits = ExecutionLimits(cpu_time=1.0, wall_clock_ttl=30.0)
    executor.spawn(
        sh("while :; do :; done", str(tmp_path)), limits, "job11", sink
    )
    events = sink.wait(timeout=30)
    notices = [e.payload for e in events if e.kind is EventKind.NOTICE]
    assert "killed(cpu)" in notices
    assert events[-1].payload == KILL_EXIT_CODE


def test_kill_running_process(executor, tmp_path):
    sink = Collector()
    handle = executor.spawn(sh("sleep 30", str(tmp_path)), GENEROUS, "job12", sink)
    time.sleep(0.2)
    executor.kill(handle, "operator-request")
    events = sink.wait(timeout=10)
    notices = [e.payload for e in events if e.kind is EventKind.NOTICE]
    assert notices == ["killed(operator-request)"]
    assert events[-1].payload == KILL_EXIT_CODE


def test_kill_is_idempotent_after_exit(executor, tmp_path):
    sink = Collector()
    handle = executor.spawn(sh("true", str(tmp_path)), GENEROUS, "job13", sink)
    events = sink.wait()
    executor.kill(handle, "late")
    executor.kill(handle, "later")
    time.sleep(0.2)
    assert sink.snapshot() == events  # no new events


def test_concurrent_kills_emit_one_notice(executor, tmp_path):
    sink = Collector()
    handle = executor.spawn(sh("sleep 30", str(tmp_path)), GENEROUS, "job14", sink)
    time.sleep(0.2)
    threads = [
        threading.Thread(target=executor.kill, args=(handle, f"race-{i}"))
        for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    events = sink.wait(timeout=10)
    assert sum(1 for e in events if e.kind is EventKind.NOTICE) == 1


def test_spawn_failure_for_missing_binary(executor, tmp_path):
    with pytest.raises(SpawnFailed):
        executor.spawn(
            CommandSpec(argv=("/no/such/binary",), working_dir=str(tmp_path), env={}),
            GENEROUS,
            "job15",
            lambda e: None,
        )


def test_spawn_failure_for_missing_working_dir(executor):
    with pytest.raises(ContextMissing):
        executor.spawn(
            CommandSpec(argv=("/bin/true",), working_dir="/no/such/dir", env={}),
            GENEROUS,
            "job16",
            lambda e: None,
        )


def test_process_tree_is_killed(executor, tmp_path):
    # A child that forks a grandchild; killing must take down the whole group.
    sink = Collector()
    marker = tmp_path / "alive"
    cmd = f"(while true; do date > {marker}; sleep 0.1; done) & sleep 30"
    handle = executor.spawn(sh(cmd, str(tmp_path)), GENEROUS, "job17", sink)
    time.sleep(0.5)
    executor.kill(handle, "teardown")
    sink.wait(timeout=10)
    time.sleep(0.5)
    if marker.exists():
        before = marker.stat().st_mtime_ns
        time.sleep(0.5)
        assert marker.stat().st_mtime_ns == before, "grandchild still writing"


def test_limits_validation():
    with pytest.raises(ValueError):
        ExecutionLimits(wall_clock_ttl=0.5)
    with pytest.raises(ValueError):
        ExecutionLimits(max_output_bytes=0)


def test_command_spec_requires_argv():
    with pytest.raises(ValueError):
        CommandSpec(argv=(), working_dir="/tmp")


# -- mock executor ----------------------------------------------------------


def test_mock_replays_script_exactly():
    mock = MockExecutor()
    mock.push_script([("stdout", b"ok"), ("exit", 0)])
    sink = Collector()
    spec = CommandSpec(argv=("anything",), working_dir="/tmp", env={})
    handle = mock.spawn(spec, GENEROUS, "jobm1", sink)
    events = sink.wait(timeout=1)
    assert [(e.kind, e.payload) for e in events] == [
        (EventKind.STDOUT, b"ok"),
        (EventKind.EXIT, 0),
    ]
    assert handle.state == "exited" and handle.exit_code == 0


def test_mock_records_specs_in_spawn_order():
    mock = MockExecutor()
    specs = [
        CommandSpec(argv=(f"cmd{i}",), working_dir="/tmp", env={}) for i in range(3)
    ]
    for i, spec in enumerate(specs):
        mock.spawn(spec, GENEROUS, f"jobm{i}", lambda e: None)
    assert mock.recorded == specs


def test_mock_default_script_is_clean_exit():
    mock = MockExecutor()
    sink = Collector()
    mock.spawn(CommandSpec(argv=("x",), working_dir="/tmp", env={}), GENEROUS, "j", sink)
    events = sink.wait(timeout=1)
    assert [(e.kind, e.payload) for e in events] == [(EventKind.EXIT, 0)]


def test_mock_appends_terminal_when_script_lacks_one():
    mock = MockExecutor()
    mock.push_script([("stdout", b"partial")])
    sink = Collector()
    mock.spawn(CommandSpec(argv=("x",), working_dir="/tmp", env={}), GENEROUS, "j", sink)
    events = sink.wait(timeout=1)
    assert events[-1].kind is EventKind.EXIT and events[-1].payload == 0
