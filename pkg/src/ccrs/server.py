"""HTTP facade: REST + server-sent events over the job services.

Routes (all JSON unless noted):

* ``POST /api/v1/one-shot`` — run one command, returns ``{jobId}``.
* ``POST /api/v1/sessions`` — allocate (or resume) an editor session.
* ``PUT /api/v1/sessions/{jobId}/files`` — stage base64-encoded files.
* ``POST /api/v1/sessions/{jobId}/actions/{name}`` — start a named action.
* ``GET /api/v1/jobs/{jobId}/events`` — SSE stream of the job's output;
  supports ``?from=`` and ``Last-Event-ID`` resume, and ``?key=`` auth for
  EventSource clients that cannot set headers.
* ``GET /healthz`` — liveness + enabled backends.
* ``POST /admin/sites``, ``POST /admin/sites/{id}/enabled``,
  ``GET /admin/jobs/{id}/audit`` — admin plane, guarded by ``X-Admin-Key``.
* ``/static`` — the embeddable browser client and demo pages.

Site authentication rides on ``X-Site-Key``; browser calls additionally
have their ``Origin`` checked against the site's allow-list, and CORS
response headers are granted per-site rather than globally.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import os
import threading
from contextlib import asynccontextmanager
from dataclasses import replace
from typing import Iterator, NoReturn, Optional

from fastapi import Body, FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ccrs import audit as audit_mod
from ccrs import jobs as jobs_mod
from ccrs import sites as sites_mod
from ccrs.audit import AuditLog
from ccrs.backends import BackendManager
from ccrs.config import ServerConfig
from ccrs.executor import ExecutionLimits, Executor, ProcessExecutor
from ccrs.jobs import JobManager, JobPolicy
from ccrs.model import EventKind, JobEvent, JobMetadata, ServerPolicy
from ccrs.sites import Site, SiteRegistry
from ccrs.wire import MetadataCodec, WireError, container_wire_name

log = logging.getLogger("ccrs.server")

API = "/api/v1"

# Map service-layer failures onto HTTP statuses. Ownership failures are
# reported as 404 so one site cannot probe for another site's job ids.
_ERROR_STATUS = [
    (sites_mod.UnknownKey, 401),
    (sites_mod.SiteDisabled, 401),
    (sites_mod.OriginRejected, 403),
    (sites_mod.BadLogin, 422),
    (sites_mod.DuplicateSiteId, 409),
    (sites_mod.InvalidPrefix, 422),
    (sites_mod.UnknownSite, 404),
    (jobs_mod.ValidationFailed, 422),
    (jobs_mod.QuotaExceeded, 429),
    (jobs_mod.Busy, 409),
    (jobs_mod.UnknownAction, 404),
    (jobs_mod.UnknownJob, 404),
    (jobs_mod.NotOwner, 404),
    (jobs_mod.PathEscape, 422),
    (jobs_mod.ContextQuotaExceeded, 413),
    (audit_mod.UnknownJob, 404),
    (WireError, 422),
]


def _raise_http(exc: Exception) -> NoReturn:
    for exc_type, status in _ERROR_STATUS:
        if isinstance(exc, exc_type):
            raise HTTPException(status_code=status, detail=str(exc)) from exc
    raise exc


def _sse_payload(event: JobEvent) -> str:
    data: dict = {"timestamp": event.timestamp_ms}
    if event.kind in (EventKind.STDOUT, EventKind.STDERR):
        data["payload"] = base64.b64encode(event.payload).decode("ascii")
    elif event.kind is EventKind.EXIT:
        data["payload"] = int(event.payload)
    else:
        data["payload"] = str(event.payload)
    return f"event: {event.kind.value}\nid: {event.seq}\ndata: {json.dumps(data)}\n\n"


def sse_stream(events: Iterator[JobEvent]) -> Iterator[str]:
    for event in events:
        yield _sse_payload(event)


def create_app(
    config: ServerConfig,
    *,
    executor: Optional[Executor] = None,
) -> FastAPI:
    """Wire the full service and return the ASGI application.

    `executor` is injectable for tests; the default supervises real host
    processes, which is what the local-sandbox backend runs on.
    """
    os.makedirs(config.spool_root, exist_ok=True)
    for path in (config.log_file, config.registry_file):
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
    audit = AuditLog(config.log_file, rotate_bytes=config.log_rotate_bytes)
    services: dict = {}
    registry = SiteRegistry(
        config.registry_file,
        on_disable=lambda site_id: services["manager"].kill_site_jobs(site_id),
    )
    backends = BackendManager(config.gc_policy(), prefix_for_site=registry.prefix_for)
    manager = JobManager(
        backends,
        executor if executor is not None else ProcessExecutor(),
        policy=JobPolicy(
            spool_root=config.spool_root,
            context_ttl=config.context_ttl,
            session_ttl=config.session_ttl,
            max_live_jobs_per_user=config.max_live_jobs_per_user,
            default_limits=config.default_limits,
        ),
        server_policy=ServerPolicy(
            allowed_bind_roots=config.allowed_bind_roots,
            image_allow_list=config.image_allow_list,
            enabled_backends=config.enabled_backends,
        ),
        audit=audit,
    )
    services["manager"] = manager
    codec = MetadataCodec(namespace=config.type_namespace)

    if config.demo_site_key:
        try:
            registry.register(
                "demo",
                config.demo_site_key,
                "demo",
                origin_allow_list=("*",),
            )
        except sites_mod.SiteError:
            log.exception("could not provision the demo site")

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        stop = threading.Event()

        def gc_loop() -> None:
            while not stop.wait(config.gc_interval):
                try:
                    manager.gc_sweep()
                    backends.gc()
                except Exception:
                    log.exception("gc sweep failed; retrying next interval")

        thread = threading.Thread(target=gc_loop, name="ccrs-gc", daemon=True)
        thread.start()
        try:
            yield
        finally:
            stop.set()

    app = FastAPI(title="ccrs", version="0.1.0", lifespan=lifespan)
    app.state.config = config
    app.state.registry = registry
    app.state.manager = manager
    app.state.backends = backends
    app.state.audit = audit
    app.state.codec = codec

    # -- per-site CORS ---------------------------------------------------------

    _CORS_HEADERS = {
        "Access-Control-Allow-Methods": "GET, POST, PUT, OPTIONS",
        "Access-Control-Allow-Headers": "Content-Type, X-Site-Key, Last-Event-ID",
        "Access-Control-Max-Age": "600",
    }

    @app.middleware("http")
    async def per_site_cors(request: Request, call_next):
        origin = request.headers.get("origin")
        allowed = origin is not None and registry.origin_allowed_by_any(origin)
        if request.method == "OPTIONS" and allowed:
            headers = dict(_CORS_HEADERS)
            headers["Access-Control-Allow-Origin"] = origin
            headers["Vary"] = "Origin"
            return Response(status_code=204, headers=headers)
        response = await call_next(request)
        if allowed:
            response.headers["Access-Control-Allow-Origin"] = origin
            response.headers["Vary"] = "Origin"
        return response

    # -- helpers -----------------------------------------------------------------

    def _site_key(request: Request, query_key: Optional[str] = None) -> str:
        key = request.headers.get("X-Site-Key") or query_key
        if not key:
            raise HTTPException(status_code=401, detail="missing site key")
        return key

    def _reject_auth(exc: sites_mod.SiteError) -> NoReturn:
        audit.record(
            "auth.rejected",
            severity="warn",
            detail={"reason": type(exc).__name__},
        )
        _raise_http(exc)

    def _authenticate_site(request: Request, query_key: Optional[str] = None) -> Site:
        """Key + enabled + origin checks — everything except the login.

        Runs before the request body is even parsed, so an unknown key is
        401 no matter how malformed the rest of the request is.
        """
        key = _site_key(request, query_key)
        origin = request.headers.get("origin")
        try:
            site = registry.authenticate_site(key)
            if origin is not None and not site.allows_origin(origin):
                raise sites_mod.OriginRejected(
                    f"origin not allowed for site {site.site_id}: {origin}"
                )
        except sites_mod.SiteError as exc:
            _reject_auth(exc)
        return site

    def _authenticate_login(request: Request, login: str) -> sites_mod.SiteUser:
        try:
            return registry.authenticate(
                _site_key(request), login, request.headers.get("origin")
            )
        except sites_mod.SiteError as exc:
            _reject_auth(exc)

    def _site_limits(site: Site) -> ExecutionLimits:
        return site.limit_overrides or config.default_limits

    def _site_policy(site: Site) -> ServerPolicy:
        images = (
            site.image_allow_list
            if site.image_allow_list is not None
            else config.image_allow_list
        )
        return ServerPolicy(
            allowed_bind_roots=config.allowed_bind_roots,
            image_allow_list=images,
            enabled_backends=config.enabled_backends,
        )

    def _parse_meta(document) -> JobMetadata:
        try:
            return codec.parse(document)
        except WireError as exc:
            _raise_http(exc)

    def _harden_meta(meta: JobMetadata, request: Request) -> JobMetadata:
        # The connection, not the client, is authoritative for where a job
        # came from.
        client = request.client.host if request.client else "unknown"
        return replace(meta, address=client, hostname=client)

    # -- job API -------------------------------------------------------------------

    @app.post(API + "/one-shot")
    def one_shot(request: Request, payload: dict = Body(...)):
        site = _authenticate_site(request)
        if "meta" not in payload or "command" not in payload:
            raise HTTPException(status_code=422, detail="body needs meta and command")
        meta = _parse_meta(payload["meta"])
        site_user = _authenticate_login(request, meta.user)
        meta = _harden_meta(meta, request)
        existing_id = payload.get("jobId")
        try:
            job_id, _buffer = manager.run_one_shot(
                meta,
                site_user.site_id,
                payload["command"],
                existing_id=existing_id,
                limits=_site_limits(site),
                policy=_site_policy(site),
            )
        except jobs_mod.JobError as exc:
            _raise_http(exc)
        return {"jobId": job_id}

    @app.post(API + "/sessions")
    def create_session(request: Request, payload: dict = Body(...)):
        site = _authenticate_site(request)
        if "meta" not in payload or "actions" not in payload:
            raise HTTPException(status_code=422, detail="body needs meta and actions")
        meta = _parse_meta(payload["meta"])
        site_user = _authenticate_login(request, meta.user)
        meta = _harden_meta(meta, request)
        if not isinstance(payload["actions"], dict):
            raise HTTPException(status_code=422, detail="actions must be an object")
        try:
            job_id = manager.create_session(
                meta,
                site_user.site_id,
                payload["actions"],
                policy=_site_policy(site),
            )
        except jobs_mod.JobError as exc:
            _raise_http(exc)
        return {"jobId": job_id}

    @app.put(API + "/sessions/{job_id}/files")
    def stage_files(job_id: str, request: Request, payload: dict = Body(...)):
        site = _authenticate_site(request)
        limits = _site_limits(site)
        declared = request.headers.get("content-length")
        if declared and declared.isdigit():
            # Base64 inflates by 4/3; anything past twice the context budget
            # cannot possibly fit.
            if int(declared) > 2 * limits.max_context_bytes:
                raise HTTPException(status_code=413, detail="payload too large")
        raw_files = payload.get("files")
        if not isinstance(raw_files, dict) or not raw_files:
            raise HTTPException(status_code=422, detail="body needs files object")
        files: dict[str, bytes] = {}
        for name, encoded in raw_files.items():
            if not isinstance(encoded, str):
                raise HTTPException(
                    status_code=422, detail=f"file {name!r} must be base64 text"
                )
            try:
                files[name] = base64.b64decode(encoded, validate=True)
            except (binascii.Error, ValueError):
                raise HTTPException(
                    status_code=422, detail=f"file {name!r} is not valid base64"
                )
        try:
            manager.stage_files(job_id, files, site.site_id, limits=limits)
        except jobs_mod.JobError as exc:
            _raise_http(exc)
        return Response(status_code=204)

    @app.post(API + "/sessions/{job_id}/actions/{action_name}")
    def run_action(job_id: str, action_name: str, request: Request):
        site = _authenticate_site(request)
        try:
            manager.run_action(
                job_id, action_name, site.site_id, limits=_site_limits(site)
            )
        except jobs_mod.JobError as exc:
            _raise_http(exc)
        return JSONResponse(
            status_code=202, content={"jobId": job_id, "action": action_name}
        )

    @app.get(API + "/jobs/{job_id}/events")
    def job_events(
        job_id: str,
        request: Request,
        key: Optional[str] = None,
        user: Optional[str] = None,
    ):
        site = _authenticate_site(request, query_key=key)
        try:
            from_seq = int(request.query_params.get("from", "0"))
        except ValueError:
            raise HTTPException(status_code=422, detail="malformed from parameter")
        last_id = request.headers.get("Last-Event-ID")
        if last_id is not None:
            try:
                from_seq = int(last_id) + 1
            except ValueError:
                raise HTTPException(status_code=422, detail="malformed Last-Event-ID")
        try:
            events = manager.subscribe(job_id, from_seq, site.site_id, user)
        except jobs_mod.JobError as exc:
            _raise_http(exc)
        return StreamingResponse(
            sse_stream(events),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    # -- health ---------------------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        spool_ok = os.path.isdir(config.spool_root) and os.access(
            config.spool_root, os.W_OK
        )
        body = {
            "status": "ok" if spool_ok else "degraded",
            "backends": sorted(
                container_wire_name(b) for b in config.enabled_backends
            ),
        }
        return JSONResponse(status_code=200 if spool_ok else 503, content=body)

    # -- admin plane ------------------------------------------------------------------

    def _require_admin(request: Request) -> None:
        presented = request.headers.get("X-Admin-Key")
        if not config.admin_key or presented != config.admin_key:
            raise HTTPException(status_code=403, detail="admin credential required")

    @app.post("/admin/sites")
    def admin_register_site(request: Request, payload: dict = Body(...)):
        _require_admin(request)
        try:
            limits = payload.get("limitOverrides")
            site = registry.register(
                payload["siteId"],
                payload["apiKey"],
                payload["userPrefix"],
                enabled=payload.get("enabled", True),
                origin_allow_list=tuple(payload.get("originAllowList", ())),
                image_allow_list=(
                    tuple(payload["imageAllowList"])
                    if payload.get("imageAllowList") is not None
                    else None
                ),
                limit_overrides=(
                    sites_mod._limits_from_json(limits) if limits else None
                ),
            )
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"missing field: {exc}")
        except sites_mod.SiteError as exc:
            _raise_http(exc)
        return {
            "siteId": site.site_id,
            "userPrefix": site.user_prefix,
            "enabled": site.enabled,
        }

    @app.post("/admin/sites/{site_id}/enabled")
    def admin_set_enabled(site_id: str, request: Request, payload: dict = Body(...)):
        _require_admin(request)
        enabled = payload.get("enabled")
        if not isinstance(enabled, bool):
            raise HTTPException(status_code=422, detail="body needs boolean enabled")
        try:
            site = registry.set_enabled(site_id, enabled)
        except sites_mod.SiteError as exc:
            _raise_http(exc)
        if not enabled:
            audit.record("site.disabled", site_id=site_id)
        return {"siteId": site.site_id, "enabled": site.enabled}

    @app.get("/admin/jobs/{job_id}/audit")
    def admin_job_audit(job_id: str, request: Request):
        _require_admin(request)
        try:
            records = audit.query(job_id)
        except audit_mod.UnknownJob as exc:
            _raise_http(exc)
        return {
            "jobId": job_id,
            "records": [
                {
                    "ts": r.timestamp_ms,
                    "severity": r.severity,
                    "event": r.event,
                    "jobId": r.job_id,
                    "siteId": r.site_id,
                    "detail": dict(r.detail),
                }
                for r in records
            ],
        }

    # -- static assets -------------------------------------------------------------------

    @app.get("/static/demo-config.js")
    def demo_config():
        if not config.demo_site_key:
            raise HTTPException(status_code=404, detail="demo site not configured")
        body = "window.CCRS_DEMO = " + json.dumps(
            {"key": config.demo_site_key, "user": "ccrsdemo"}
        ) + ";\n"
        return Response(content=body, media_type="application/javascript")

    if config.static_dir and os.path.isdir(config.static_dir):
        app.mount("/static", StaticFiles(directory=config.static_dir), name="static")

    return app
