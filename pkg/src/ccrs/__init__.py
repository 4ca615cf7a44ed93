"""CCRS: a self-hostable job runner that lets instructional web pages embed
live, containerized code execution.

The package is organized around the job lifecycle: `model`/`wire` define the
domain types and the JSON wire codec, `ids` generates sortable job IDs,
`executor` supervises child processes under resource limits, `backends` maps
job metadata to concrete container invocations, `jobs` owns contexts and
event fan-out, `sites` authenticates instructor sites, `audit` keeps the
job-ID-keyed forensic log, and `server` exposes everything over HTTP + SSE.
"""

from ccrs.ids import make_job_id
from ccrs.model import (
    ContainerType,
    EventKind,
    JobEvent,
    JobMetadata,
    MountSpec,
    ServerPolicy,
    check_metadata,
    validate_metadata,
)
from ccrs.wire import MetadataCodec, parse_metadata, serialize_metadata

__version__ = "0.1.0"

__all__ = [
    "ContainerType",
    "EventKind",
    "JobEvent",
    "JobMetadata",
    "MetadataCodec",
    "MountSpec",
    "ServerPolicy",
    "check_metadata",
    "make_job_id",
    "parse_metadata",
    "serialize_metadata",
    "validate_metadata",
]
