"""Backend strategies: prepared state, exact argv construction, and GC."""

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _gc_replay import reclaim_set, run_history
from ccrs.backends import (
    BackendManager,
    ContainerStartFailed,
    GcPolicy,
    ImageMissing,
    PreparedEnvironment,
    UserProvisionFailed,
    WORK_DIR,
    container_handle_for,
    container_spec_key,
)
from ccrs.executor import MockExecutor, ExecutionLimits
from ccrs.model import ContainerType, JobMetadata, MountSpec

GOLDEN_DIR = Path(__file__).parent.parent / "testdata" / "argv"

FIXED_CONTEXT = "/tmp/ccrs/cvw/0123456789abcdefghjkmnpqrs"

LISTING_META = JobMetadata(
    container_type=ContainerType.IMAGE_PER_JOB,
    user="ccrsdemo",
    shell="bash",
    image="vsoch-master-latest.simg",
)


def golden(name: str) -> tuple:
    return tuple(json.loads((GOLDEN_DIR / name).read_text()))


def spawn_and_record(manager, meta, site, context, command):
    """Build the command and run it through the recording executor."""
    env = manager.prepare(meta, site, context)
    spec = manager.build_command(env, meta, command)
    mock = MockExecutor()
    mock.spawn(spec, ExecutionLimits(), "0123456789abcdefghjkmnpqrs", lambda e: None)
    return mock.recorded[0]


# -- prepare -------------------------------------------------------------------


def test_prepare_image_per_job_listing():
    manager = BackendManager()
    env = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    assert env.backend_kind is ContainerType.IMAGE_PER_JOB
    assert env.host_user == "cvw-ccrsdemo"
    assert env.context_mount == MountSpec(FIXED_CONTEXT, WORK_DIR)
    assert env.image_ref == "vsoch-master-latest.simg"


def test_prepare_is_idempotent_per_user():
    provisioned = []
    manager = BackendManager(provision_host_user=provisioned.append)
    first = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    second = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    assert first.host_user == second.host_user
    assert provisioned == ["cvw-ccrsdemo"]
    assert manager.accounting.users_created("cvw") == {"cvw-ccrsdemo"}


def test_prepare_requires_image_for_image_per_job():
    meta = JobMetadata(container_type=ContainerType.IMAGE_PER_JOB, user="u")
    with pytest.raises(ImageMissing):
        BackendManager().prepare(meta, "cvw", FIXED_CONTEXT)


def test_failed_user_provision_is_retryable():
    calls = []

    def flaky(user):
        calls.append(user)
        if len(calls) == 1:
            raise RuntimeError("useradd unavailable")

    manager = BackendManager(provision_host_user=flaky)
    with pytest.raises(UserProvisionFailed):
        manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    assert manager.accounting.users_created("cvw") == set()
    env = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    assert env.host_user == "cvw-ccrsdemo"
    assert calls == ["cvw-ccrsdemo", "cvw-ccrsdemo"]


def shared_meta(user, image="nix-shared.img", container_id=None):
    return JobMetadata(
        container_type=ContainerType.SHARED_CONTAINER,
        user=user,
        image=image,
        container_id=container_id,
    )


def test_shared_container_two_users_one_machine():
    started = []
    users_made = []
    manager = BackendManager(
        start_container=lambda handle, meta: started.append(handle),
        provision_container_user=lambda handle, user: users_made.append((handle, user)),
    )
    env_a = manager.prepare(shared_meta("alice"), "cvw", FIXED_CONTEXT)
    env_b = manager.prepare(shared_meta("bob"), "cvw", FIXED_CONTEXT)
    assert env_a.container_handle == env_b.container_handle == "ccrs-nix-shared-img"
    assert started == ["ccrs-nix-shared-img"]
    assert users_made == [
        ("ccrs-nix-shared-img", "alice"),
        ("ccrs-nix-shared-img", "bob"),
    ]
    assert manager.accounting.containers_running() == {
        "image:nix-shared.img": "ccrs-nix-shared-img"
    }
    assert manager.accounting.container_users("image:nix-shared.img") == {
        "alice",
        "bob",
    }


def test_container_id_beats_image_as_spec_key():
    meta = shared_meta("alice", container_id="course-env")
    assert container_spec_key(meta) == "id:course-env"
    meta2 = shared_meta("alice", image=None, container_id="course-env")
    assert container_spec_key(meta2) == "id:course-env"


def test_failed_container_start_is_retryable():
    attempts = []

    def flaky(handle, meta):
        attempts.append(handle)
        if len(attempts) == 1:
            raise RuntimeError("machinectl down")

    manager = BackendManager(start_container=flaky)
    with pytest.raises(ContainerStartFailed):
        manager.prepare(shared_meta("alice"), "cvw", FIXED_CONTEXT)
    assert manager.accounting.containers_running() == {}
    env = manager.prepare(shared_meta("alice"), "cvw", FIXED_CONTEXT)
    assert env.container_handle == "ccrs-nix-shared-img"
    assert len(attempts) == 2


def test_handle_collisions_get_distinct_machines():
    manager = BackendManager()
    env_dot = manager.prepare(shared_meta("u", image="a.b"), "cvw", FIXED_CONTEXT)
    env_dash = manager.prepare(shared_meta("u", image="a-b"), "cvw", FIXED_CONTEXT)
    assert env_dot.container_handle != env_dash.container_handle
    handles = set(manager.accounting.containers_running().values())
    assert len(handles) == 2


def test_long_spec_keys_stay_within_machine_name_budget():
    handle = container_handle_for("image:" + "x" * 200)
    assert handle.startswith("ccrs-")
    assert len(handle) <= len("ccrs-") + 48


def test_local_sandbox_prepares_without_external_state():
    provisioned = []
    manager = BackendManager(provision_host_user=provisioned.append)
    meta = JobMetadata(container_type=ContainerType.LOCAL_SANDBOX, user="kid")
    env = manager.prepare(meta, "cvw", FIXED_CONTEXT)
    assert env.host_user is None and env.container_handle is None
    assert provisioned == []


def test_prepared_environment_invariants():
    mount = MountSpec(FIXED_CONTEXT, WORK_DIR)
    with pytest.raises(ValueError):
        PreparedEnvironment(ContainerType.IMAGE_PER_JOB, mount)  # no host user
    with pytest.raises(ValueError):
        PreparedEnvironment(ContainerType.SHARED_CONTAINER, mount)  # no handle
    with pytest.raises(ValueError):
        PreparedEnvironment(
            ContainerType.LOCAL_SANDBOX, MountSpec(FIXED_CONTEXT, "/elsewhere")
        )


# -- command construction (golden argv) -----------------------------------------


def test_golden_image_per_job_basic():
    recorded = spawn_and_record(
        BackendManager(), LISTING_META, "cvw", FIXED_CONTEXT, "pwd"
    )
    assert recorded.argv == golden("image-per-job-basic.golden")
    assert recorded.working_dir == FIXED_CONTEXT


def test_golden_image_per_job_binds_overlay():
    meta = JobMetadata(
        container_type=ContainerType.IMAGE_PER_JOB,
        user="ccrsdemo",
        shell="sh",
        image="vsoch-master-latest.simg",
        binds=(
            MountSpec("/srv/data", "/data", read_only=True),
            MountSpec("/srv/shared", "/shared"),
        ),
        overlay="overlay.img",
    )
    recorded = spawn_and_record(BackendManager(), meta, "cvw", FIXED_CONTEXT, "python hello.py")
    assert recorded.argv == golden("image-per-job-binds-overlay.golden")


def test_golden_shared_container():
    recorded = spawn_and_record(
        BackendManager(),
        shared_meta("ccrsdemo"),
        "cvw",
        FIXED_CONTEXT,
        "gcc hello.c -o hello && ./hello",
    )
    assert recorded.argv == golden("shared-container.golden")


def test_golden_local_sandbox():
    meta = JobMetadata(container_type=ContainerType.LOCAL_SANDBOX, user="kid")
    recorded = spawn_and_record(BackendManager(), meta, "cvw", FIXED_CONTEXT, "echo hi")
    assert recorded.argv == golden("local-sandbox.golden")
    assert recorded.env["HOME"] == FIXED_CONTEXT
    assert "LD_PRELOAD" not in recorded.env


def test_build_command_rejects_empty_command():
    manager = BackendManager()
    env = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    with pytest.raises(ValueError):
        manager.build_command(env, LISTING_META, "")


_bind = st.builds(
    MountSpec,
    host_path=st.sampled_from(["/srv/a", "/srv/b", "/opt/data"]),
    container_path=st.sampled_from(["/a", "/b", "/data"]),
    read_only=st.booleans(),
)


@settings(max_examples=200, deadline=None)
@given(binds=st.lists(_bind, max_size=4), overlay=st.one_of(st.none(), st.just("o.img")))
def test_image_per_job_argv_shape(binds, overlay):
    """Isolation flag always present; context bind first; extras in order."""
    meta = JobMetadata(
        container_type=ContainerType.IMAGE_PER_JOB,
        user="u",
        image="img.simg",
        binds=tuple(binds),
        overlay=overlay,
    )
    manager = BackendManager()
    env = manager.prepare(meta, "cvw", FIXED_CONTEXT)
    argv = list(manager.build_command(env, meta, "run").argv)
    assert "--containall" in argv
    bind_values = [argv[i + 1] for i, a in enumerate(argv) if a == "--bind"]
    assert bind_values[0] == f"{FIXED_CONTEXT}:{WORK_DIR}"
    expected_extras = [
        f"{b.host_path}:{b.container_path}" + (":ro" if b.read_only else "")
        for b in binds
    ]
    assert bind_values[1:] == expected_extras
    assert ("--overlay" in argv) == (overlay is not None)
    assert argv[-3:] == ["bash", "-c", "run"]


def test_shell_defaults_to_bash_everywhere():
    manager = BackendManager()
    for meta in (
        JobMetadata(container_type=ContainerType.LOCAL_SANDBOX, user="u"),
        shared_meta("u"),
        JobMetadata(container_type=ContainerType.IMAGE_PER_JOB, user="u", image="i.simg"),
    ):
        env = manager.prepare(meta, "cvw", FIXED_CONTEXT)
        argv = manager.build_command(env, meta, "x").argv
        assert "bash" in argv


# -- garbage collection ----------------------------------------------------------


def test_gc_on_empty_accounting():
    assert BackendManager().gc() == []


def test_idle_container_is_reclaimed():
    current = [1000]
    policy = GcPolicy(container_idle_ttl=30.0)
    manager = BackendManager(policy, clock=lambda: current[0])
    env = manager.prepare(shared_meta("alice"), "cvw", FIXED_CONTEXT)
    manager.mark_complete(env, "cvw")
    current[0] += int(2 * 30.0 * 1000)
    reclaimed = manager.gc()
    assert [(r.kind, r.ref) for r in reclaimed] == [
        ("container", "ccrs-nix-shared-img")
    ]
    assert manager.accounting.containers_running() == {}


def test_live_container_survives_sweep():
    current = [1000]
    policy = GcPolicy(container_idle_ttl=30.0)
    manager = BackendManager(policy, clock=lambda: current[0])
    manager.prepare(shared_meta("alice"), "cvw", FIXED_CONTEXT)  # never completed
    current[0] += 10 * 30 * 1000
    assert manager.gc() == []
    assert manager.accounting.containers_running() != {}


def test_stale_user_is_reclaimed_and_live_user_kept():
    current = [1000]
    policy = GcPolicy(user_ttl=60.0)
    manager = BackendManager(policy, clock=lambda: current[0])
    done = manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    manager.mark_complete(done, "cvw")
    running_meta = JobMetadata(
        container_type=ContainerType.IMAGE_PER_JOB, user="worker", image="i.simg"
    )
    manager.prepare(running_meta, "cvw", "/tmp/ccrs/cvw/other")
    current[0] += 2 * 60 * 1000
    reclaimed = manager.gc()
    assert {(r.kind, r.ref, r.site_id) for r in reclaimed} == {
        ("user", "cvw-ccrsdemo", "cvw")
    }
    assert manager.accounting.users_created("cvw") == {"cvw-worker"}


def test_gc_replay_oracle_200_events():
    policy = GcPolicy(container_idle_ttl=30.0, user_ttl=60.0)
    manager, expected, sweep_at = run_history(seed=20260815, n_events=200, policy=policy)
    assert reclaim_set(manager, sweep_at) == expected


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 80))
def test_gc_replay_oracle_property(seed, n):
    policy = GcPolicy(container_idle_ttl=25.0, user_ttl=55.0)
    manager, expected, sweep_at = run_history(seed=seed, n_events=n, policy=policy)
    assert reclaim_set(manager, sweep_at) == expected


def test_context_accounting_tracks_releases():
    manager = BackendManager()
    manager.prepare(LISTING_META, "cvw", FIXED_CONTEXT)
    assert FIXED_CONTEXT in manager.accounting.contexts_live()
    manager.release_context(FIXED_CONTEXT)
    assert FIXED_CONTEXT not in manager.accounting.contexts_live()
