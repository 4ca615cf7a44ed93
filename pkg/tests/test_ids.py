"""Job ID format, ordering, and uniqueness."""

import re
import threading

import pytest

from ccrs.ids import JOB_ID_RE, is_job_id, job_id_timestamp_ms, make_job_id


def test_zero_case_encodes_to_all_zeros():
    jid = make_job_id(clock=lambda: 0, entropy=lambda n: b"\x00" * n)
    assert jid == "00000000000000000000000000"


def test_format_matches_contract():
    jid = make_job_id()
    assert len(jid) == 26
    assert JOB_ID_RE.match(jid)
    assert is_job_id(jid)


def test_deterministic_given_fixed_inputs():
    a = make_job_id(clock=lambda: 1234, entropy=lambda n: bytes(range(n)))
    b = make_job_id(clock=lambda: 1234, entropy=lambda n: bytes(range(n)))
    assert a == b


def test_timestamp_round_trips():
    jid = make_job_id(clock=lambda: 1_700_000_000_123)
    assert job_id_timestamp_ms(jid) == 1_700_000_000_123


def test_lexicographic_order_follows_timestamps():
    first = make_job_id(clock=lambda: 1000)
    second = make_job_id(clock=lambda: 3000)
    assert first < second


def test_uniqueness_over_100k_generations():
    seen = set()
    for _ in range(100_000):
        seen.add(make_job_id())
    assert len(seen) == 100_000


def test_concurrent_generation_has_no_duplicates():
    results: list[str] = []
    lock = threading.Lock()

    def worker():
        local = [make_job_id() for _ in range(2000)]
        with lock:
            results.extend(local)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(results)) == len(results) == 16_000


def test_rejects_out_of_range_timestamp():
    with pytest.raises(ValueError):
        make_job_id(clock=lambda: -5)
    with pytest.raises(ValueError):
        make_job_id(clock=lambda: 1 << 48)


def test_is_job_id_rejects_bad_shapes():
    assert not is_job_id("short")
    assert not is_job_id("0" * 25)
    assert not is_job_id("0" * 27)
    assert not is_job_id("O" * 26)  # uppercase
    assert not is_job_id("l" * 26)  # not in the decodable alphabet
    assert not is_job_id(12345)


def test_generated_alphabet_is_sorted():
    # Lexicographic ordering of encoded IDs relies on the alphabet being in
    # ascending ASCII order.
    from ccrs.ids import ALPHABET

    assert list(ALPHABET) == sorted(ALPHABET)
    assert re.fullmatch(r"[0-9a-z]+", ALPHABET)
