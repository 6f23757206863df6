"""Single egress point for chat-completion calls.

Everything that talks to the outside world goes through ``Gateway.complete``:
retries with exponential backoff and full jitter, a hard timeout, a concurrency
cap, and a deterministic mock mode that replays recorded scripts so the entire
suite runs with networking disabled.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import httpx

from .errors import (
    AuthFailed,
    GatewayTimeout,
    IoError,
    MockMiss,
    RateLimited,
    TransportError,
)

DEFAULT_MODEL = "gpt-4o-2024-08-06"
BACKOFF_BASE_MS = 500
BACKOFF_FACTOR = 2


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    model_id: str = DEFAULT_MODEL
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.system_text.strip() or not self.user_text.strip():
            raise ValueError("chat request texts must be nonempty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be ≥ 1")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be ≥ 0")


class GatewayMode(Enum):
    LIVE = "live"
    MOCK = "mock"


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    api_key_ref: str = "OPENAI_API_KEY"  # name of the env var, never the key
    timeout_ms: int = 30_000
    max_retries: int = 3
    max_concurrent: int = 4
    mode: GatewayMode = GatewayMode.LIVE
    script_path: str | None = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be ≥ 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be ≥ 1")
        if self.mode is GatewayMode.MOCK and not self.script_path:
            raise ValueError("mock mode needs a script_path")


_WS_RE = re.compile(r"\s+")


def canonical_request_hash(request: ChatRequest) -> str:
    """Stable digest of a request: sorted keys, whitespace-collapsed texts."""
    payload = {
        "max_output_tokens": request.max_output_tokens,
        "model_id": request.model_id,
        "system_text": _WS_RE.sub(" ", request.system_text).strip(),
        "temperature": request.temperature,
        "user_text": _WS_RE.sub(" ", request.user_text).strip(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def record_script(
    calls: Iterable[tuple[ChatRequest, ChatResponse]], path: str | Path
) -> Path:
    """Write request-hash → response records for later mock playback."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for request, response in calls:
                fh.write(
                    json.dumps(
                        {
                            "hash": canonical_request_hash(request),
                            "response_text": response.text,
                            "latency_ms": response.latency_ms,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoError(f"cannot write mock script {path}: {exc}") from exc
    return path


def _load_script(path: str | Path) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    try:
        lines = Path(path).read_text("utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read mock script {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries[str(record["hash"])] = (
                str(record["response_text"]),
                int(record.get("latency_ms", 0)),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IoError(f"bad mock script line {lineno} in {path}: {exc}") from exc
    return entries


# transport(request, config, api_key) -> (http status, parsed JSON body)
Transport = Callable[[ChatRequest, GatewayConfig, str], tuple[int, dict]]


def _http_transport(request: ChatRequest, config: GatewayConfig, api_key: str) -> tuple[int, dict]:
    body = {
        "model": request.model_id,
        "messages": [
            {"role": "system", "content": request.system_text},
            {"role": "user", "content": request.user_text},
        ],
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    }
    response = httpx.post(
        config.endpoint_url,
        json=body,
        headers={"Authorization": f"Bearer {api_key}"},
        timeout=config.timeout_ms / 1000,
    )
    try:
        parsed = response.json()
    except ValueError:
        parsed = {}
    return response.status_code, parsed


class Gateway:
    """Thread-safe handle; at most max_concurrent requests in flight."""

    def __init__(
        self,
        config: GatewayConfig,
        *,
        transport: Transport = _http_transport,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.config = config
        self._transport = transport
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._clock = clock
        self._semaphore = threading.BoundedSemaphore(config.max_concurrent)
        self._script: dict[str, tuple[str, int]] | None = None
        self._script_lock = threading.Lock()
        self._recorded: list[tuple[ChatRequest, ChatResponse]] = []
        self._record_lock = threading.Lock()
        self.recording = False

    # ------------------------------------------------------------------ mock

    def _script_entries(self) -> dict[str, tuple[str, int]]:
        with self._script_lock:
            if self._script is None:
                assert self.config.script_path is not None
                self._script = _load_script(self.config.script_path)
            return self._script

    def _complete_mock(self, request: ChatRequest) -> ChatResponse:
        digest = canonical_request_hash(request)
        entry = self._script_entries().get(digest)
        if entry is None:
            raise MockMiss(f"no scripted response for request hash {digest}", hash=digest)
        text, latency_ms = entry
        return ChatResponse(text=text, input_tokens=0, output_tokens=0, latency_ms=latency_ms)

    # ------------------------------------------------------------------ live

    def _resolve_key(self) -> str:
        key = os.environ.get(self.config.api_key_ref, "")
        if not key:
            raise AuthFailed(
                f"API key environment variable {self.config.api_key_ref} is not set"
            )
        return key

    def _attempt(self, request: ChatRequest, api_key: str) -> ChatResponse:
        started = self._clock()
        with self._semaphore:
            try:
                status, body = self._transport(request, self.config, api_key)
            except httpx.TimeoutException as exc:
                raise GatewayTimeout(
                    f"no response within {self.config.timeout_ms} ms"
                ) from exc
            except httpx.HTTPError as exc:
                raise TransportError(f"transport failure: {type(exc).__name__}") from exc
        latency_ms = max(0, int((self._clock() - started) * 1000))

        if status in (401, 403):
            raise AuthFailed(f"provider rejected credentials (HTTP {status})")
        if status == 429:
            raise RateLimited("provider rate limit hit (HTTP 429)")
        if status in (408, 504):
            raise GatewayTimeout(f"provider timeout (HTTP {status})")
        if status >= 400:
            raise TransportError(f"provider error (HTTP {status})")
        try:
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage", {})
            return ChatResponse(
                text=str(text),
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=latency_ms,
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError("provider returned an unrecognized body") from exc

    def _complete_live(self, request: ChatRequest) -> ChatResponse:
        api_key = self._resolve_key()
        attempts = 1 + self.config.max_retries
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                # Full jitter: anywhere from zero up to the exponential ceiling.
                ceiling_ms = BACKOFF_BASE_MS * (BACKOFF_FACTOR ** (attempt - 1))
                self._sleep(self._rng.uniform(0, ceiling_ms) / 1000)
            try:
                response = self._attempt(request, api_key)
            except AuthFailed:
                raise  # retrying with the same bad key cannot help
            except (GatewayTimeout, RateLimited, TransportError) as exc:
                last_error = exc
                continue
            if self.recording:
                with self._record_lock:
                    self._recorded.append((request, response))
            return response
        assert last_error is not None
        raise last_error

    # ------------------------------------------------------------- interface

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.config.mode is GatewayMode.MOCK:
            return self._complete_mock(request)
        return self._complete_live(request)

    def start_recording(self) -> None:
        """Capture subsequent live responses for record_script."""
        self.recording = True

    def dump_recorded(self, path: str | Path) -> Path:
        with self._record_lock:
            return record_script(list(self._recorded), path)
