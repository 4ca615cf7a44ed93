"""Server configuration: one file, environment overrides, sane defaults.

The config file is JSON (or TOML on interpreters that ship ``tomllib``),
with the same camelCase key style as the wire format. Every value has a
default, so a bare server starts with no file at all: local-sandbox
backend, spool under ``/tmp/ccrs``, registry and audit log beside it.

Environment variables override file values (``CCRS_LISTEN``,
``CCRS_SPOOL_ROOT``, ``CCRS_REGISTRY_FILE``, ``CCRS_LOG_FILE``,
``CCRS_ADMIN_KEY``, ``CCRS_NAMESPACE``); command-line flags override both.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional

from ccrs.backends import GcPolicy
from ccrs.executor import ExecutionLimits
from ccrs.model import ContainerType
from ccrs.wire import DEFAULT_NAMESPACE

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    tomllib = None

_BACKEND_NAMES = {
    "Singularity": ContainerType.IMAGE_PER_JOB,
    "ImagePerJob": ContainerType.IMAGE_PER_JOB,
    "SystemdNspawn": ContainerType.SHARED_CONTAINER,
    "SharedContainer": ContainerType.SHARED_CONTAINER,
    "LocalSandbox": ContainerType.LOCAL_SANDBOX,
}


class ConfigError(ValueError):
    """The configuration file or overrides are unusable."""


@dataclass(frozen=True)
class ServerConfig:
    """Complete, validated server settings."""

    listen_address: str = "127.0.0.1:8080"
    spool_root: str = "/tmp/ccrs"
    registry_file: str = "/tmp/ccrs/sites.json"
    log_file: str = "/tmp/ccrs/audit.log"
    log_rotate_bytes: int = 16 * 1024 * 1024
    default_limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    enabled_backends: frozenset = frozenset({ContainerType.LOCAL_SANDBOX})
    type_namespace: str = DEFAULT_NAMESPACE
    gc_interval: float = 300.0
    context_ttl: float = 24 * 3600.0
    session_ttl: float = 7 * 24 * 3600.0
    container_idle_ttl: float = 3600.0
    user_ttl: float = 30 * 86400.0
    max_live_jobs_per_user: int = 4
    allowed_bind_roots: tuple = ()
    image_allow_list: Optional[tuple] = None
    admin_key: Optional[str] = None
    static_dir: Optional[str] = None
    demo_site_key: Optional[str] = None

    def __post_init__(self) -> None:
        if not os.path.isabs(self.spool_root):
            raise ConfigError("spoolRoot must be an absolute path")
        if not self.enabled_backends:
            raise ConfigError("at least one backend must be enabled")
        if self.gc_interval <= 0:
            raise ConfigError("gc interval must be strictly positive")
        if self.log_rotate_bytes <= 0:
            raise ConfigError("log rotation size must be strictly positive")
        host, _, port = self.listen_address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"malformed listen address: {self.listen_address!r}")

    @property
    def listen_host(self) -> str:
        return self.listen_address.rpartition(":")[0]

    @property
    def listen_port(self) -> int:
        return int(self.listen_address.rpartition(":")[2])

    def gc_policy(self) -> GcPolicy:
        return GcPolicy(
            container_idle_ttl=self.container_idle_ttl, user_ttl=self.user_ttl
        )


def _parse_limits(doc: Mapping) -> ExecutionLimits:
    base = ExecutionLimits()
    return ExecutionLimits(
        wall_clock_ttl=doc.get("wallClockTtl", base.wall_clock_ttl),
        cpu_time=doc.get("cpuTime", base.cpu_time),
        memory_bytes=doc.get("memoryBytes", base.memory_bytes),
        max_output_bytes=doc.get("maxOutputBytes", base.max_output_bytes),
        max_context_bytes=doc.get("maxContextBytes", base.max_context_bytes),
        max_processes=doc.get("maxProcesses", base.max_processes),
    )


def _parse_backends(names) -> frozenset:
    backends = set()
    for name in names:
        if name not in _BACKEND_NAMES:
            raise ConfigError(f"unknown backend: {name!r}")
        backends.add(_BACKEND_NAMES[name])
    return frozenset(backends)


def _read_file(path: str) -> Mapping:
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        if tomllib is None:
            raise ConfigError(
                "TOML config requires Python 3.11+; use a JSON config file"
            )
        return tomllib.loads(raw.decode("utf-8"))
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def load_config(
    path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    listen: Optional[str] = None,
) -> ServerConfig:
    """Assemble a ServerConfig from file + environment + flag overrides."""
    env = os.environ if env is None else env
    doc: Mapping = {}
    if path is not None:
        doc = _read_file(path)
        if not isinstance(doc, Mapping):
            raise ConfigError("config root must be an object/table")

    gc_doc = doc.get("gc", {})
    kwargs = dict(
        listen_address=doc.get("listenAddress", "127.0.0.1:8080"),
        spool_root=doc.get("spoolRoot", "/tmp/ccrs"),
        registry_file=doc.get("registryFile", "/tmp/ccrs/sites.json"),
        log_file=doc.get("logFile", "/tmp/ccrs/audit.log"),
        log_rotate_bytes=doc.get("logRotateBytes", 16 * 1024 * 1024),
        default_limits=_parse_limits(doc.get("defaults", {})),
        type_namespace=doc.get("typeNamespace", DEFAULT_NAMESPACE),
        gc_interval=gc_doc.get("intervalSeconds", 300.0),
        context_ttl=gc_doc.get("contextTtl", 24 * 3600.0),
        session_ttl=gc_doc.get("sessionTtl", 7 * 24 * 3600.0),
        container_idle_ttl=gc_doc.get("containerIdleTtl", 3600.0),
        user_ttl=gc_doc.get("userTtl", 30 * 86400.0),
        max_live_jobs_per_user=doc.get("maxLiveJobsPerUser", 4),
        allowed_bind_roots=tuple(doc.get("allowedBindRoots", ())),
        admin_key=doc.get("adminKey"),
        static_dir=doc.get("staticDir"),
        demo_site_key=doc.get("demoSiteKey"),
    )
    if "enabledBackends" in doc:
        kwargs["enabled_backends"] = _parse_backends(doc["enabledBackends"])
    if doc.get("imageAllowList") is not None:
        kwargs["image_allow_list"] = tuple(doc["imageAllowList"])

    if env.get("CCRS_LISTEN"):
        kwargs["listen_address"] = env["CCRS_LISTEN"]
    if env.get("CCRS_SPOOL_ROOT"):
        kwargs["spool_root"] = env["CCRS_SPOOL_ROOT"]
    if env.get("CCRS_REGISTRY_FILE"):
        kwargs["registry_file"] = env["CCRS_REGISTRY_FILE"]
    if env.get("CCRS_LOG_FILE"):
        kwargs["log_file"] = env["CCRS_LOG_FILE"]
    if env.get("CCRS_ADMIN_KEY"):
        kwargs["admin_key"] = env["CCRS_ADMIN_KEY"]
    if env.get("CCRS_NAMESPACE"):
        kwargs["type_namespace"] = env["CCRS_NAMESPACE"]

    if listen is not None:
        kwargs["listen_address"] = listen
    return ServerConfig(**kwargs)
