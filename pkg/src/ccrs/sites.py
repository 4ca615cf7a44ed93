"""Site registry: authenticate embedding sites and scope users to them.

Instructor sites are the trust boundary: each holds an API key, a unique
host-user prefix, an origin allow-list, and an enabled switch that can be
flipped to cut off a misbehaving site. Students are identified by the site,
not by this service, so a "user" here is always (site, login) and maps to a
deterministic per-site host account name.

The registry persists as one human-editable JSON file (secrets stored as
salted hashes) that is reloaded whenever its mtime changes, so small
deployments can manage sites with a text editor as easily as via the admin
API.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import re
import secrets
import threading
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

from ccrs.executor import ExecutionLimits
from ccrs.model import MAX_USER_LENGTH, USER_RE

log = logging.getLogger("ccrs.sites")

SITE_ID_RE = re.compile(r"^[a-z][a-z0-9-]{0,15}$")
PREFIX_RE = re.compile(r"^[a-z][a-z0-9]{0,11}$")
MAX_HOST_USER_LENGTH = 31
_OVERFLOW_HASH_LENGTH = 8


class SiteError(Exception):
    """Base class for registry failures."""


class DuplicateSiteId(SiteError):
    """A different site is already registered under this id."""


class InvalidPrefix(SiteError):
    """The user prefix is malformed or already claimed by another site."""


class UnknownSite(SiteError):
    """No site registered under this id."""


class UnknownKey(SiteError):
    """The presented API key matches no registered site."""


class SiteDisabled(SiteError):
    """The site exists but has been switched off."""


class OriginRejected(SiteError):
    """The request origin is not on the site's allow-list."""


class BadLogin(SiteError):
    """The student login is not a valid user name."""


def derive_host_user(prefix: str, login: str) -> str:
    """Map a site-scoped login to a host account name.

    The name is ``<prefix>-<login>``; when that exceeds 31 characters the
    login part is replaced by an 8-character hash so the result stays a
    valid, deterministic account name.
    """
    candidate = f"{prefix}-{login}"
    if len(candidate) <= MAX_HOST_USER_LENGTH:
        return candidate
    digest = hashlib.sha256(login.encode("utf-8")).hexdigest()
    return f"{prefix}-{digest[:_OVERFLOW_HASH_LENGTH]}"


def hash_api_key(key: str, salt: str) -> str:
    return hashlib.sha256((salt + key).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Site:
    """One registered embedding site; `api_key_hash` is salted, never raw."""

    site_id: str
    api_key_hash: str
    key_salt: str
    user_prefix: str
    enabled: bool = True
    origin_allow_list: tuple[str, ...] = ()
    limit_overrides: Optional[ExecutionLimits] = None
    image_allow_list: Optional[tuple[str, ...]] = None  # None = any image

    def allows_origin(self, origin: str) -> bool:
        return "*" in self.origin_allow_list or origin in self.origin_allow_list

    def matches_key(self, presented: str) -> bool:
        return hmac.compare_digest(
            hash_api_key(presented, self.key_salt), self.api_key_hash
        )


@dataclass(frozen=True)
class SiteUser:
    """A student identity scoped to one site."""

    site_id: str
    login: str
    host_user: str


def _limits_to_json(limits: ExecutionLimits) -> dict:
    return {
        "wallClockTtl": limits.wall_clock_ttl,
        "cpuTime": limits.cpu_time,
        "memoryBytes": limits.memory_bytes,
        "maxOutputBytes": limits.max_output_bytes,
        "maxContextBytes": limits.max_context_bytes,
        "maxProcesses": limits.max_processes,
    }


def _limits_from_json(doc: Mapping) -> ExecutionLimits:
    return ExecutionLimits(
        wall_clock_ttl=doc.get("wallClockTtl", 60.0),
        cpu_time=doc.get("cpuTime", 30.0),
        memory_bytes=doc.get("memoryBytes", 512 * 1024 * 1024),
        max_output_bytes=doc.get("maxOutputBytes", 4 * 1024 * 1024),
        max_context_bytes=doc.get("maxContextBytes", 64 * 1024 * 1024),
        max_processes=doc.get("maxProcesses", 64),
    )


def _site_to_json(site: Site) -> dict:
    doc = {
        "siteId": site.site_id,
        "apiKeyHash": site.api_key_hash,
        "keySalt": site.key_salt,
        "userPrefix": site.user_prefix,
        "enabled": site.enabled,
        "originAllowList": list(site.origin_allow_list),
    }
    if site.limit_overrides is not None:
        doc["limitOverrides"] = _limits_to_json(site.limit_overrides)
    if site.image_allow_list is not None:
        doc["imageAllowList"] = list(site.image_allow_list)
    return doc


def _site_from_json(doc: Mapping) -> Site:
    limits = doc.get("limitOverrides")
    images = doc.get("imageAllowList")
    return Site(
        site_id=doc["siteId"],
        api_key_hash=doc["apiKeyHash"],
        key_salt=doc["keySalt"],
        user_prefix=doc["userPrefix"],
        enabled=bool(doc.get("enabled", True)),
        origin_allow_list=tuple(doc.get("originAllowList", ())),
        limit_overrides=_limits_from_json(limits) if limits else None,
        image_allow_list=tuple(images) if images is not None else None,
    )


class SiteRegistry:
    """Authoritative, file-backed set of sites.

    Reads serve an immutable snapshot; admin mutations serialize, persist
    atomically, and swap the snapshot. The file is re-read when its mtime
    changes so out-of-band edits take effect without a restart.
    """

    def __init__(
        self,
        path: str,
        on_disable: Optional[Callable[[str], None]] = None,
    ):
        self._path = path
        self._on_disable = on_disable
        self._lock = threading.Lock()
        self._snapshot: dict[str, Site] = {}
        self._loaded_mtime_ns: Optional[int] = None
        if os.path.exists(path):
            self._reload_locked()

    # -- persistence --------------------------------------------------------

    def _reload_locked(self) -> None:
        try:
            with open(self._path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            self._loaded_mtime_ns = os.stat(self._path).st_mtime_ns
        except (OSError, json.JSONDecodeError):
            log.exception("cannot read site registry %s; keeping snapshot", self._path)
            return
        snapshot: dict[str, Site] = {}
        for doc in raw:
            try:
                site = _site_from_json(doc)
            except (KeyError, TypeError, ValueError):
                log.exception("skipping malformed site record in %s", self._path)
                continue
            snapshot[site.site_id] = site
        self._snapshot = snapshot

    def _persist_locked(self) -> None:
        payload = json.dumps(
            [_site_to_json(s) for s in self._snapshot.values()], indent=2
        )
        tmp = f"{self._path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._path)
        self._loaded_mtime_ns = os.stat(self._path).st_mtime_ns

    def _refresh_locked(self) -> None:
        try:
            mtime_ns = os.stat(self._path).st_mtime_ns
        except OSError:
            return
        if mtime_ns != self._loaded_mtime_ns:
            self._reload_locked()

    def _current(self) -> dict[str, Site]:
        with self._lock:
            self._refresh_locked()
            return self._snapshot

    def origin_allowed_by_any(self, origin: str) -> bool:
        """True when at least one enabled site's allow-list admits `origin`.

        Used to decide whether a cross-origin response may carry CORS grants
        at all; per-site enforcement still happens during authentication.
        """
        return any(
            site.enabled and site.allows_origin(origin)
            for site in self._current().values()
        )

    # -- admin operations ----------------------------------------------------

    def register(
        self,
        site_id: str,
        api_key: str,
        user_prefix: str,
        *,
        enabled: bool = True,
        origin_allow_list: Sequence[str] = (),
        limit_overrides: Optional[ExecutionLimits] = None,
        image_allow_list: Optional[Sequence[str]] = None,
    ) -> Site:
        """Add a site; identical re-registration is a no-op.

        Raises DuplicateSiteId when the id is taken with different settings
        and InvalidPrefix for a malformed or already-claimed prefix.
        """
        if not SITE_ID_RE.match(site_id):
            raise InvalidPrefix(f"malformed site id: {site_id!r}")
        if not PREFIX_RE.match(user_prefix):
            raise InvalidPrefix(f"malformed user prefix: {user_prefix!r}")
        with self._lock:
            self._refresh_locked()
            existing = self._snapshot.get(site_id)
            if existing is not None:
                same = (
                    existing.user_prefix == user_prefix
                    and existing.matches_key(api_key)
                    and existing.origin_allow_list == tuple(origin_allow_list)
                )
                if same:
                    return existing
                raise DuplicateSiteId(f"site id already registered: {site_id}")
            for other in self._snapshot.values():
                if other.user_prefix == user_prefix:
                    raise InvalidPrefix(
                        f"prefix {user_prefix!r} already claimed by site {other.site_id}"
                    )
            salt = secrets.token_hex(8)
            site = Site(
                site_id=site_id,
                api_key_hash=hash_api_key(api_key, salt),
                key_salt=salt,
                user_prefix=user_prefix,
                enabled=enabled,
                origin_allow_list=tuple(origin_allow_list),
                limit_overrides=limit_overrides,
                image_allow_list=tuple(image_allow_list)
                if image_allow_list is not None
                else None,
            )
            self._snapshot = dict(self._snapshot, **{site_id: site})
            self._persist_locked()
            return site

    def set_enabled(self, site_id: str, enabled: bool) -> Site:
        """Flip a site's switch; disabling fires the on_disable callback."""
        with self._lock:
            self._refresh_locked()
            site = self._snapshot.get(site_id)
            if site is None:
                raise UnknownSite(site_id)
            was_enabled = site.enabled
            site = replace(site, enabled=enabled)
            self._snapshot = dict(self._snapshot, **{site_id: site})
            self._persist_locked()
        if was_enabled and not enabled and self._on_disable is not None:
            try:
                self._on_disable(site_id)
            except Exception:
                log.exception("on_disable callback failed for site %s", site_id)
        return site

    # -- lookups -------------------------------------------------------------

    def get(self, site_id: str) -> Site:
        site = self._current().get(site_id)
        if site is None:
            raise UnknownSite(site_id)
        return site

    def site_ids(self) -> list[str]:
        return sorted(self._current())

    def prefix_for(self, site_id: str) -> str:
        return self.get(site_id).user_prefix

    def find_by_key(self, api_key: str) -> Optional[Site]:
        """Scan every site with a constant-time digest compare per entry."""
        matched: Optional[Site] = None
        for site in self._current().values():
            if site.matches_key(api_key):
                matched = site
        return matched

    def authenticate_site(self, api_key: str) -> Site:
        """Resolve an API key to its enabled site (no origin/login checks)."""
        site = self.find_by_key(api_key)
        if site is None:
            raise UnknownKey("no site matches the presented key")
        if not site.enabled:
            raise SiteDisabled(site.site_id)
        return site

    def authenticate(
        self, api_key: str, login: str, origin: Optional[str]
    ) -> SiteUser:
        """Resolve an API key + student login to a SiteUser.

        The key must belong to an enabled site and the login must be a
        well-formed user name. When an origin is given (browser traffic) it
        must be on the site's allow-list; `origin=None` marks a
        server-to-server call, which the key alone authenticates.
        """
        site = self.authenticate_site(api_key)
        if origin is not None and not site.allows_origin(origin):
            raise OriginRejected(f"origin not allowed for site {site.site_id}: {origin}")
        if not USER_RE.match(login) or len(login) > MAX_USER_LENGTH:
            raise BadLogin(f"malformed login: {login!r}")
        return SiteUser(
            site_id=site.site_id,
            login=login,
            host_user=derive_host_user(site.user_prefix, login),
        )
