"""HTTP face of the prompt builder.

``create_app`` wires the content pack, durable event store, validator
backend, and token auth into a FastAPI app.  Every state-changing handler
follows the same discipline:

1. mutate the in-memory session under that session's lock,
2. append the newly born events to the write-ahead log (fsync),
3. only then serialize the response.

So any response a client has seen is backed by durable state: killing the
process between any two API calls and restarting from the store directory
yields the same ``session_view``.

All errors cross the wire as ``{"code", "message", "details"}``.
"""

from __future__ import annotations

import contextlib
import json
import logging
import secrets
import threading
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping

import yaml
from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from . import builder
from .builder import BuilderSession
from .content import Scenario, load_content_pack, load_default_pack
from .errors import (
    AuthError,
    BindError,
    Forbidden,
    GatewayError,
    PositionOutOfRange,
    PromptForgeError,
    SchemaError,
    UnknownSession,
    ValidatorUnavailable,
)
from .gateway import Gateway, GatewayConfig, GatewayMode
from .storage import (
    IDEMPOTENCY_FILE,
    TOKENS_FILE,
    EventStore,
    IdempotencyLog,
    TokenRegistry,
)
from .validation import Criterion, LlmJudge, ValidationOutcome, evaluate_segment

log = logging.getLogger(__name__)

ValidatorFn = Callable[[list[Criterion], str, Scenario], ValidationOutcome]

ENV_PACK = "PF_PACK"
ENV_STORE = "PF_STORE"
ENV_LISTEN = "PF_LISTEN"
ENV_VALIDATOR = "PF_VALIDATOR"
ENV_GATEWAY_MODE = "PF_GATEWAY_MODE"
ENV_GATEWAY_SCRIPT = "PF_GATEWAY_SCRIPT"
ENV_GATEWAY_ENDPOINT = "PF_GATEWAY_ENDPOINT"
ENV_API_KEY_REF = "PF_API_KEY_REF"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceConfig:
    pack_path: str | None = None  # None -> bundled pack
    store_dir: str = "./pf-store"
    listen: str = "127.0.0.1:8080"
    validator: str = "rule_oracle"  # "rule_oracle" | "llm_judge"
    snapshot_every: int = 20
    gateway_mode: str = "mock"
    gateway_script: str | None = None
    gateway_endpoint: str | None = None
    api_key_ref: str = "OPENAI_API_KEY"


def load_config(
    path: str | None = None, env: Mapping[str, str] | None = None
) -> ServiceConfig:
    """Config file first, then environment overrides on top."""
    import os

    env = os.environ if env is None else env
    cfg = ServiceConfig()
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise SchemaError(f"unreadable config file {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("config file must hold a mapping")
        gw = doc.get("gateway") or {}
        if not isinstance(gw, dict):
            raise SchemaError("config key 'gateway' must hold a mapping")
        cfg = replace(
            cfg,
            pack_path=doc.get("pack", cfg.pack_path),
            store_dir=doc.get("store", cfg.store_dir),
            listen=doc.get("listen", cfg.listen),
            validator=doc.get("validator", cfg.validator),
            snapshot_every=int(doc.get("snapshot_every", cfg.snapshot_every)),
            gateway_mode=gw.get("mode", cfg.gateway_mode),
            gateway_script=gw.get("script", cfg.gateway_script),
            gateway_endpoint=gw.get("endpoint", cfg.gateway_endpoint),
            api_key_ref=gw.get("api_key_ref", cfg.api_key_ref),
        )
    overrides: dict[str, Any] = {}
    if env.get(ENV_PACK):
        overrides["pack_path"] = env[ENV_PACK]
    if env.get(ENV_STORE):
        overrides["store_dir"] = env[ENV_STORE]
    if env.get(ENV_LISTEN):
        overrides["listen"] = env[ENV_LISTEN]
    if env.get(ENV_VALIDATOR):
        overrides["validator"] = env[ENV_VALIDATOR]
    if env.get(ENV_GATEWAY_MODE):
        overrides["gateway_mode"] = env[ENV_GATEWAY_MODE]
    if env.get(ENV_GATEWAY_SCRIPT):
        overrides["gateway_script"] = env[ENV_GATEWAY_SCRIPT]
    if env.get(ENV_GATEWAY_ENDPOINT):
        overrides["gateway_endpoint"] = env[ENV_GATEWAY_ENDPOINT]
    if env.get(ENV_API_KEY_REF):
        overrides["api_key_ref"] = env[ENV_API_KEY_REF]
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.validator not in ("rule_oracle", "llm_judge"):
        raise SchemaError(f"unknown validator {cfg.validator!r}")
    return cfg


def parse_listen(listen: str) -> tuple[str, int]:
    host, sep, port = listen.rpartition(":")
    if not sep or not host:
        raise BindError(f"listen address must be host:port, got {listen!r}")
    try:
        port_no = int(port)
    except ValueError as exc:
        raise BindError(f"invalid port in {listen!r}") from exc
    if not 0 < port_no < 65536:
        raise BindError(f"port out of range in {listen!r}")
    return host, port_no


def build_validator(config: ServiceConfig) -> ValidatorFn:
    if config.validator == "rule_oracle":
        return lambda criteria, text, scenario: evaluate_segment(
            criteria, text, scenario=scenario
        )
    gw_config = GatewayConfig(
        endpoint_url=config.gateway_endpoint or GatewayConfig().endpoint_url,
        api_key_ref=config.api_key_ref,
        mode=GatewayMode(config.gateway_mode),
        script_path=config.gateway_script,
    )
    judge = LlmJudge(Gateway(gw_config))
    return lambda criteria, text, scenario: evaluate_segment(
        criteria, text, scenario=scenario, backend=judge
    )


# --------------------------------------------------------------------------
# error mapping
# --------------------------------------------------------------------------

_STATUS_BY_CODE = {
    "AuthError": 401,
    "Forbidden": 403,
    "UnknownScenario": 404,
    "UnknownSession": 404,
    "PositionOutOfRange": 404,
    "WrongPhase": 409,
    "StepNotPassed": 409,
    "InvalidTransition": 409,
    "IdempotencyConflict": 409,
    "OptionOutOfRange": 422,
    "EmptySegment": 422,
    "SchemaError": 422,
    "PackValidationError": 422,
    "ValidatorUnavailable": 503,
    "JudgeUnavailable": 503,
    "Timeout": 503,
    "RateLimited": 503,
    "GatewayError": 502,
    "TransportError": 502,
    "AuthFailed": 502,  # upstream credentials, not the client's token
    "MockMiss": 502,
    "JudgeMalformed": 502,
    "StorageFull": 507,
    "IoError": 500,
}


def _jsonable(value: Any) -> Any:
    return json.loads(json.dumps(value, default=str))


def error_body(exc: PromptForgeError) -> dict[str, Any]:
    return {
        "code": exc.code,
        "message": exc.message,
        "details": _jsonable(getattr(exc, "details", {}) or {}),
    }


# --------------------------------------------------------------------------
# the app factory
# --------------------------------------------------------------------------

def create_app(
    config: ServiceConfig | None = None,
    *,
    validator: ValidatorFn | None = None,
    clock: Callable[[], int] | None = None,
) -> FastAPI:
    config = config or ServiceConfig()
    pack = load_content_pack(config.pack_path) if config.pack_path else load_default_pack()
    store = EventStore(config.store_dir, pack, snapshot_every=config.snapshot_every)
    sessions = store.open()
    store_root = Path(config.store_dir)
    tokens = TokenRegistry(store_root / TOKENS_FILE)
    idempotency = IdempotencyLog(store_root / IDEMPOTENCY_FILE)
    validate = validator if validator is not None else build_validator(config)
    tick = clock

    session_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
    registry_lock = threading.Lock()  # guards the sessions dict + WAL ordering

    @contextlib.asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        with registry_lock:
            store.close(sessions)

    app = FastAPI(title="promptforge", lifespan=lifespan)
    app.state.config = config
    app.state.pack = pack
    app.state.store = store
    app.state.sessions = sessions
    app.state.tokens = tokens

    # -- plumbing ---------------------------------------------------------

    def authenticate(request: Request):
        header = request.headers.get("Authorization", "")
        if not header.startswith("Bearer "):
            raise AuthError("missing bearer token")
        return tokens.lookup(header[len("Bearer ") :].strip())

    def get_session(session_id: str) -> BuilderSession:
        session = sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}", session_id=session_id)
        return session

    def authorize(record, session: BuilderSession) -> None:
        if not record.admin and record.user_id != session.user_id:
            raise Forbidden("session belongs to a different user")

    @contextlib.contextmanager
    def locked(session_id: str) -> Iterator[None]:
        lock = session_locks[session_id]
        with lock:
            yield

    def persist(session: BuilderSession, events_before: int) -> None:
        """Make everything the operation produced durable before responding."""
        tail = session.events[events_before:]
        if not tail:
            return
        with registry_lock:
            store.append_many(tail)
            if store.snapshot_due():
                store.write_snapshot(sessions)

    def require(payload: Mapping[str, Any], key: str, kind: type) -> Any:
        if key not in payload:
            raise SchemaError(f"missing field {key!r}", field=key)
        value = payload[key]
        if kind is int and isinstance(value, bool) or not isinstance(value, kind):
            raise SchemaError(
                f"field {key!r} must be {kind.__name__}", field=key
            )
        return value

    def idempotent(
        request: Request,
        record,
        payload: Mapping[str, Any],
        produce: Callable[[], tuple[int, dict[str, Any]]],
    ) -> JSONResponse:
        """Replay semantics for retried mutations (successes only)."""
        key = request.headers.get("Idempotency-Key")
        if not key:
            status, body = produce()
            return JSONResponse(body, status_code=status)
        full_key = f"{record.user_id}|{request.method} {request.url.path}|{key}"
        digest = IdempotencyLog.body_digest(
            json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        )
        hit = idempotency.lookup(full_key, digest)
        if hit is not None:
            return JSONResponse(
                json.loads(hit.response_body),
                status_code=hit.status_code,
                headers={"Idempotency-Replayed": "true"},
            )
        status, body = produce()
        if 200 <= status < 300:
            idempotency.record(full_key, digest, status, json.dumps(body))
        return JSONResponse(body, status_code=status)

    # -- error handlers ----------------------------------------------------

    @app.exception_handler(PromptForgeError)
    async def handle_pf_error(_: Request, exc: PromptForgeError) -> JSONResponse:
        status = _STATUS_BY_CODE.get(exc.code, 500)
        if status >= 500:
            log.error("request failed: %s %s", exc.code, exc.message)
        return JSONResponse(error_body(exc), status_code=status)

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            {"code": "SchemaError", "message": "malformed request body", "details": {}},
            status_code=422,
        )

    # -- session endpoints --------------------------------------------------

    @app.post("/sessions")
    def create_session(
        request: Request, payload: dict[str, Any] = Body(default_factory=dict)
    ) -> JSONResponse:
        record = authenticate(request)
        raw_sid = payload.get("scenario_id", payload.get("scenario"))
        if not isinstance(raw_sid, str) or not raw_sid:
            raise SchemaError("missing field 'scenario_id'", field="scenario_id")
        user_id = record.user_id
        requested_user = payload.get("user", payload.get("user_id"))
        if requested_user is not None and requested_user != record.user_id:
            if not record.admin:
                raise Forbidden("cannot create sessions for another user")
            user_id = str(requested_user)
        seed = payload.get("seed", secrets.randbits(32))
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise SchemaError("field 'seed' must be int", field="seed")

        def produce() -> tuple[int, dict[str, Any]]:
            scenario = pack.scenario(raw_sid)  # raises UnknownScenario
            kwargs: dict[str, Any] = {}
            if tick is not None:
                kwargs["clock"] = tick
            session = builder.start_session(user_id, scenario, pack, seed, **kwargs)
            with registry_lock:
                if session.session_id in sessions:  # pragma: no cover - uuid4 clash
                    raise UnknownSession("session id collision; retry")
                sessions[session.session_id] = session
            persist(session, 0)
            return 201, builder.session_view(session)

        return idempotent(request, record, payload, produce)

    @app.get("/sessions/{session_id}")
    def get_session_view(request: Request, session_id: str) -> JSONResponse:
        record = authenticate(request)
        with locked(session_id):
            session = get_session(session_id)
            authorize(record, session)
            return JSONResponse(builder.session_view(session))

    @app.post("/sessions/{session_id}/choice")
    def post_choice(
        request: Request,
        session_id: str,
        payload: dict[str, Any] = Body(default_factory=dict),
    ) -> JSONResponse:
        record = authenticate(request)
        option_index = require(payload, "option_index", int)

        def produce() -> tuple[int, dict[str, Any]]:
            with locked(session_id):
                session = get_session(session_id)
                authorize(record, session)
                before = len(session.events)
                result = builder.answer_choice(session, option_index)
                persist(session, before)
                return 200, {
                    "correct": result.correct,
                    "hint": result.hint,
                    "view": builder.session_view(session),
                }

        return idempotent(request, record, payload, produce)

    @app.post("/sessions/{session_id}/segment")
    def post_segment(
        request: Request,
        session_id: str,
        payload: dict[str, Any] = Body(default_factory=dict),
    ) -> JSONResponse:
        record = authenticate(request)
        text = require(payload, "text", str)

        def produce() -> tuple[int, dict[str, Any]]:
            with locked(session_id):
                session = get_session(session_id)
                authorize(record, session)
                before = len(session.events)
                try:
                    outcome, _ = builder.submit_segment(session, text, validate)
                except (ValidatorUnavailable, GatewayError):
                    # The submission event is real even though validation never
                    # answered; keep the log equal to what happened in memory.
                    persist(session, before)
                    raise
                persist(session, before)
                return 200, {
                    "outcome": {
                        "backend": outcome.backend.value,
                        "all_passed": outcome.all_passed,
                        "verdicts": [
                            {
                                "criterion_id": v.criterion_id,
                                "passed": v.passed,
                                "rationale": v.rationale,
                            }
                            for v in outcome.verdicts
                        ],
                        "feedback": {
                            "summary": outcome.feedback.summary,
                            "advice": list(outcome.feedback.per_criterion_advice),
                        },
                    },
                    "view": builder.session_view(session),
                }

        return idempotent(request, record, payload, produce)

    @app.post("/sessions/{session_id}/accept-solution")
    def post_accept_solution(
        request: Request,
        session_id: str,
        payload: dict[str, Any] = Body(default_factory=dict),
    ) -> JSONResponse:
        record = authenticate(request)

        def produce() -> tuple[int, dict[str, Any]]:
            with locked(session_id):
                session = get_session(session_id)
                authorize(record, session)
                before = len(session.events)
                builder.accept_sample_solution(session)
                persist(session, before)
                return 200, {"view": builder.session_view(session)}

        return idempotent(request, record, payload, produce)

    @app.post("/sessions/{session_id}/advance")
    def post_advance(
        request: Request,
        session_id: str,
        payload: dict[str, Any] = Body(default_factory=dict),
    ) -> JSONResponse:
        record = authenticate(request)

        def produce() -> tuple[int, dict[str, Any]]:
            with locked(session_id):
                session = get_session(session_id)
                authorize(record, session)
                before = len(session.events)
                builder.advance(session)
                persist(session, before)
                return 200, {"view": builder.session_view(session)}

        return idempotent(request, record, payload, produce)

    # -- content endpoints ---------------------------------------------------

    @app.get("/scenarios")
    def list_scenarios(request: Request) -> JSONResponse:
        authenticate(request)
        return JSONResponse(
            {
                "scenarios": [
                    {
                        "id": s.id,
                        "character_name": s.character_name,
                        "study_role": s.role_in_study.value,
                        "difficulty": s.true_difficulty.value,
                        "difficulty_label": s.true_difficulty.label,
                        "comics": len(s.comic_asset_refs),
                    }
                    for s in pack.scenarios
                ]
            }
        )

    @app.get("/scenarios/{scenario_id}/comics/{index}")
    def get_comic(request: Request, scenario_id: str, index: int) -> FileResponse:
        authenticate(request)
        scenario = pack.scenario(scenario_id)
        missing = PositionOutOfRange(
            f"scenario {scenario_id!r} has no comic asset {index}",
            scenario_id=scenario_id,
            index=index,
        )
        if not 0 <= index < len(scenario.comic_asset_refs):
            raise missing
        path = (pack.base_dir or Path(".")) / scenario.comic_asset_refs[index]
        if not path.is_file():
            raise missing
        return FileResponse(path, media_type="image/png")

    # -- export ---------------------------------------------------------------

    @app.get("/export/events")
    def export_events(
        request: Request,
        session_id: str | None = None,
        user_id: str | None = None,
        since: int | None = None,
        until: int | None = None,
    ) -> PlainTextResponse:
        record = authenticate(request)
        if not record.admin:
            raise Forbidden("event export requires an admin token")
        with registry_lock:
            records = store.export_events(
                session_id=session_id, user_id=user_id, since=since, until=until
            )
        lines = [json.dumps(r.to_dict(), separators=(",", ":")) for r in records]
        return PlainTextResponse(
            "\n".join(lines) + ("\n" if lines else ""),
            media_type="application/x-ndjson",
        )

    return app
