"""Job ID generation.

A job ID is 26 lowercase base32 characters encoding a 48-bit millisecond
timestamp followed by 80 random bits. The alphabet is in ascending ASCII
order, so lexicographic order of two IDs generated at least 2 ms apart
matches generation order; that makes spool directories and audit logs sort
chronologically for free.
"""

from __future__ import annotations

import re
import secrets
import time
from typing import Callable, Final

# Crockford's base32 set, lowercased: no i/l/o/u, ascending ASCII order.
ALPHABET: Final[str] = "0123456789abcdefghjkmnpqrstvwxyz"
JOB_ID_LENGTH: Final[int] = 26
JOB_ID_RE: Final[re.Pattern[str]] = re.compile(r"^[0-9a-z]{26}$")

_TIMESTAMP_BITS: Final[int] = 48
_RANDOM_BYTES: Final[int] = 10
_MAX_TIMESTAMP_MS: Final[int] = (1 << _TIMESTAMP_BITS) - 1
_DECODE: Final[dict[str, int]] = {c: i for i, c in enumerate(ALPHABET)}
_STRICT_RE: Final[re.Pattern[str]] = re.compile(f"^[{ALPHABET}]{{{JOB_ID_LENGTH}}}$")

Clock = Callable[[], int]
Entropy = Callable[[int], bytes]


def now_ms() -> int:
    """Current wall-clock time in milliseconds since the epoch."""
    return time.time_ns() // 1_000_000


def make_job_id(clock: Clock | None = None, entropy: Entropy | None = None) -> str:
    """Generate a fresh job ID.

    `clock` returns milliseconds since the epoch and `entropy` returns n
    random bytes; both default to the real thing and exist so tests can pin
    the output.
    """
    ts = (clock or now_ms)()
    if not 0 <= ts <= _MAX_TIMESTAMP_MS:
        raise ValueError(f"timestamp out of range for job id: {ts}")
    raw = (entropy or secrets.token_bytes)(_RANDOM_BYTES)
    if len(raw) != _RANDOM_BYTES:
        raise ValueError(f"entropy must yield {_RANDOM_BYTES} bytes, got {len(raw)}")
    value = (ts << 80) | int.from_bytes(raw, "big")
    out = ["0"] * JOB_ID_LENGTH
    for i in range(JOB_ID_LENGTH - 1, -1, -1):
        out[i] = ALPHABET[value & 0b11111]
        value >>= 5
    return "".join(out)


def is_job_id(value: str) -> bool:
    """True if `value` is a well-formed job ID (decodable alphabet only)."""
    return isinstance(value, str) and _STRICT_RE.match(value) is not None


def job_id_timestamp_ms(job_id: str) -> int:
    """Extract the millisecond timestamp a job ID was generated at."""
    if not is_job_id(job_id):
        raise ValueError(f"not a job id: {job_id!r}")
    value = 0
    for ch in job_id:
        value = (value << 5) | _DECODE[ch]
    return value >> 80
