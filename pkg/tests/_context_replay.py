"""Replay driver for context garbage-collection oracle tests.

Feeds a JobManager a random interleaving of create / reuse / sweep events
under a scripted clock, mirroring every step in a pure model, and checks at
every sweep that the removed set — and finally the surviving set — matches
a brute-force recomputation from the event log.
"""

import os
import random

from ccrs.backends import BackendManager
from ccrs.executor import MockExecutor
from ccrs.jobs import JobManager, JobPolicy
from ccrs.model import ContainerType, JobMetadata

STEP_MS = 1000

META = JobMetadata(container_type=ContainerType.LOCAL_SANDBOX, user="kid")


def run_context_history(
    seed: int,
    n_events: int,
    spool_root: str,
    context_ttl: float = 50.0,
    session_ttl: float = 110.0,
):
    """Returns (manager, model) after n_events random steps.

    `model` maps surviving job_id -> (mode, last_used_ms) recomputed purely
    from the event history. Raises AssertionError as soon as any sweep
    removes a different set than the model predicts.
    """
    rng = random.Random(seed)
    current = [0]
    policy = JobPolicy(
        spool_root=spool_root,
        context_ttl=context_ttl,
        session_ttl=session_ttl,
        max_live_jobs_per_user=1_000_000,
    )
    manager = JobManager(
        BackendManager(clock=lambda: current[0]),
        MockExecutor(clock=lambda: current[0]),
        policy=policy,
        clock=lambda: current[0],
    )
    model: dict[str, list] = {}  # job_id -> [mode, last_used_ms]

    def ttl_ms(mode: str) -> int:
        return int((session_ttl if mode == "session" else context_ttl) * 1000)

    for step in range(n_events):
        t = (step + 1) * STEP_MS
        current[0] = t
        roll = rng.random()
        if roll < 0.40 or not model:
            if rng.random() < 0.5:
                job_id, _ = manager.run_one_shot(META, "site", "echo x")
                model[job_id] = ["oneShot", t]
            else:
                job_id = manager.create_session(META, "site", {"run": "echo x"})
                model[job_id] = ["session", t]
        elif roll < 0.75:
            job_id = rng.choice(sorted(model))
            mode = model[job_id][0]
            if mode == "oneShot":
                manager.run_one_shot(META, "site", "echo x", existing_id=job_id)
            else:
                manager.run_action(job_id, "run", "site", "kid")
            model[job_id][1] = t
        else:
            removed_paths = set(manager.gc_sweep(t))
            expected = {
                job_id
                for job_id, (mode, last) in model.items()
                if last <= t - ttl_ms(mode)
            }
            removed_ids = {os.path.basename(p) for p in removed_paths}
            assert removed_ids == expected, (
                f"sweep at t={t}: removed {sorted(removed_ids)} "
                f"!= expected {sorted(expected)}"
            )
            for job_id in expected:
                del model[job_id]
                assert not os.path.isdir(
                    os.path.join(spool_root, "site", job_id)
                ), f"context directory survived removal: {job_id}"

    return manager, model
