"""Durable persistence for the session service.

Layout under one store directory:

* ``events.log``       write-ahead log, one JSON record per line:
                       ``{"session_id", "seq", "event"}``.  Sequence numbers
                       are per-session, contiguous, starting at 0.  Every
                       append is flushed and fsynced before the caller may
                       answer its API request, so an acknowledged write
                       survives a crash.
* ``snapshot.json``    periodic materialization of session state (written
                       atomically via rename).  Purely an optimization: a
                       restore from snapshot + log tail must equal a full
                       replay of the log, and recovery falls back to full
                       replay whenever the snapshot is missing or stale.
* ``tokens.json``      bearer tokens, stored as sha256 hex digests only.
* ``idempotency.log``  request-deduplication records, retained 24 hours.

A torn final line in ``events.log`` (crash mid-write, file not newline
terminated) is truncated away on open; the corresponding request was never
acknowledged, so dropping it is the correct recovery.  A malformed line in
the middle of the log is real corruption and raises IoError.
"""

from __future__ import annotations

import errno
import hashlib
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .builder import (
    BuilderSession,
    EventKind,
    SessionEvent,
    SessionStatus,
    StepPhase,
    StepState,
    apply_event,
    replay,
)
from .content import ContentPack
from .errors import (
    AuthError,
    IdempotencyConflict,
    InvalidTransition,
    IoError,
    StorageFull,
)
from .prompt_model import ComponentKind, PromptSegment, SegmentOrigin
from .validation import FeedbackMessage

EVENTS_FILE = "events.log"
SNAPSHOT_FILE = "snapshot.json"
TOKENS_FILE = "tokens.json"
IDEMPOTENCY_FILE = "idempotency.log"

SNAPSHOT_EVERY_DEFAULT = 20
IDEMPOTENCY_TTL_MS = 24 * 60 * 60 * 1000


def _now_ms() -> int:
    return time.time_ns() // 1_000_000


def _wrap_os_error(exc: OSError, what: str) -> IoError:
    if exc.errno == errno.ENOSPC:
        return StorageFull(f"no space left while writing {what}")
    return IoError(f"{what}: {exc}", errno=exc.errno)


# --------------------------------------------------------------------------
# session state <-> plain dicts (for snapshots)
# --------------------------------------------------------------------------

def serialize_session(session: BuilderSession) -> dict[str, Any]:
    """State only — the event log itself lives in events.log."""
    return {
        "session_id": session.session_id,
        "user_id": session.user_id,
        "scenario_id": session.scenario_id,
        "rng_seed": session.rng_seed,
        "created_at": session.created_at,
        "updated_at": session.updated_at,
        "current_position": session.current_position,
        "status": session.status.value,
        "assembled_prompt": session.assembled_prompt,
        "steps": [
            {
                "step_id": s.step_id,
                "phase": s.phase.value,
                "failed_attempts": s.failed_attempts,
                "mcq_attempts": s.mcq_attempts,
                "accepted_segment": None
                if s.accepted_segment is None
                else {
                    "component": s.accepted_segment.component.value,
                    "text": s.accepted_segment.text,
                    "origin": s.accepted_segment.origin.value,
                },
                "feedback_history": [
                    {"summary": f.summary, "advice": list(f.per_criterion_advice)}
                    for f in s.feedback_history
                ],
            }
            for s in session.steps
        ],
    }


def deserialize_session(data: Mapping[str, Any], pack: ContentPack) -> BuilderSession:
    steps = []
    for raw in data["steps"]:
        seg = raw["accepted_segment"]
        steps.append(
            StepState(
                step_id=raw["step_id"],
                phase=StepPhase(raw["phase"]),
                failed_attempts=int(raw["failed_attempts"]),
                mcq_attempts=int(raw["mcq_attempts"]),
                accepted_segment=None
                if seg is None
                else PromptSegment(
                    component=ComponentKind(seg["component"]),
                    text=seg["text"],
                    origin=SegmentOrigin(seg["origin"]),
                ),
                feedback_history=[
                    FeedbackMessage(
                        summary=f["summary"],
                        per_criterion_advice=tuple(f["advice"]),
                    )
                    for f in raw["feedback_history"]
                ],
            )
        )
    return BuilderSession(
        session_id=data["session_id"],
        user_id=data["user_id"],
        scenario_id=data["scenario_id"],
        rng_seed=int(data["rng_seed"]),
        created_at=int(data["created_at"]),
        updated_at=int(data["updated_at"]),
        current_position=int(data["current_position"]),
        status=SessionStatus(data["status"]),
        steps=steps,
        events=[],
        assembled_prompt=data["assembled_prompt"],
        pack=pack,
    )


# --------------------------------------------------------------------------
# the event store
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    session_id: str
    seq: int
    event: SessionEvent

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "seq": self.seq,
            "event": self.event.to_dict(),
        }


class EventStore:
    """Append-only event log with snapshot-accelerated recovery."""

    def __init__(
        self,
        root: str | os.PathLike[str],
        pack: ContentPack,
        *,
        snapshot_every: int = SNAPSHOT_EVERY_DEFAULT,
    ):
        self.root = Path(root)
        self.pack = pack
        self.snapshot_every = max(1, snapshot_every)
        self._lock = threading.RLock()
        self._fh = None  # type: ignore[assignment]
        self._next_seq: dict[str, int] = {}
        self._terminal: set[str] = set()
        self._session_user: dict[str, str] = {}
        self._since_snapshot = 0

    # -- lifecycle ----------------------------------------------------------

    def open(self) -> dict[str, BuilderSession]:
        """Recover all sessions and open the log for appending."""
        with self._lock:
            try:
                self.root.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise _wrap_os_error(exc, "store directory") from exc
            records = self._read_log()
            sessions = self._recover(records)
            try:
                self._fh = open(self.root / EVENTS_FILE, "ab")
            except OSError as exc:
                raise _wrap_os_error(exc, EVENTS_FILE) from exc
            return sessions

    def close(self, sessions: Mapping[str, BuilderSession] | None = None) -> None:
        with self._lock:
            if sessions is not None:
                self.write_snapshot(sessions)
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # -- appends -------------------------------------------------------------

    def append_event(self, event: SessionEvent) -> int:
        return self.append_many([event])[0]

    def append_many(self, events: Iterable[SessionEvent]) -> list[int]:
        """Append a batch atomically-enough: one flush+fsync for the batch.

        The service appends all events born from one API operation before
        answering that operation, which keeps acknowledged state durable.
        """
        events = list(events)
        if not events:
            return []
        if self._fh is None:
            raise IoError("event store is not open")
        with self._lock:
            seqs: list[int] = []
            payload_lines: list[bytes] = []
            # Validate the entire batch before writing any of it.
            next_seq = dict(self._next_seq)
            terminal = set(self._terminal)
            for event in events:
                sid = event.session_id
                if sid in terminal:
                    raise InvalidTransition(
                        f"session {sid} is completed; no further events accepted",
                        session_id=sid,
                        kind=event.kind.value,
                    )
                seq = next_seq.get(sid, 0)
                record = LogRecord(session_id=sid, seq=seq, event=event)
                payload_lines.append(
                    json.dumps(record.to_dict(), separators=(",", ":")).encode("utf-8")
                    + b"\n"
                )
                seqs.append(seq)
                next_seq[sid] = seq + 1
                if event.kind is EventKind.SESSION_COMPLETED:
                    terminal.add(sid)
            try:
                self._fh.write(b"".join(payload_lines))
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                raise _wrap_os_error(exc, EVENTS_FILE) from exc
            # Only commit in-memory bookkeeping once the bytes are durable.
            self._next_seq = next_seq
            self._terminal = terminal
            for event in events:
                if event.kind is EventKind.SESSION_STARTED:
                    self._session_user[event.session_id] = str(
                        event.payload.get("user_id", "")
                    )
            self._since_snapshot += len(events)
            return seqs

    def snapshot_due(self) -> bool:
        return self._since_snapshot >= self.snapshot_every

    def write_snapshot(self, sessions: Mapping[str, BuilderSession]) -> None:
        with self._lock:
            doc = {
                "version": 1,
                "sessions": {sid: serialize_session(s) for sid, s in sessions.items()},
                "applied": {sid: len(s.events) for sid, s in sessions.items()},
            }
            tmp = self.root / (SNAPSHOT_FILE + ".tmp")
            try:
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump(doc, fh)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.root / SNAPSHOT_FILE)
            except OSError as exc:
                raise _wrap_os_error(exc, SNAPSHOT_FILE) from exc
            self._since_snapshot = 0

    # -- reads ----------------------------------------------------------------

    def export_events(
        self,
        *,
        session_id: str | None = None,
        user_id: str | None = None,
        since: int | None = None,
        until: int | None = None,
    ) -> list[LogRecord]:
        """Filtered export in (session_id, seq) order.

        Filters combine conjunctively; ``since``/``until`` are inclusive
        millisecond bounds on the event timestamp.
        """
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
            records = self._read_log()
            out = []
            for rec in records:
                if session_id is not None and rec.session_id != session_id:
                    continue
                if user_id is not None and self._session_user.get(rec.session_id) != user_id:
                    continue
                ts = rec.event.timestamp
                if since is not None and ts < since:
                    continue
                if until is not None and ts > until:
                    continue
                out.append(rec)
            out.sort(key=lambda r: (r.session_id, r.seq))
            return out

    def user_of(self, session_id: str) -> str | None:
        return self._session_user.get(session_id)

    # -- internals --------------------------------------------------------------

    def _read_log(self) -> list[LogRecord]:
        path = self.root / EVENTS_FILE
        if not path.exists():
            return []
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise _wrap_os_error(exc, EVENTS_FILE) from exc
        records: list[LogRecord] = []
        offset = 0
        good_end = 0
        for line in raw.split(b"\n"):
            line_end = offset + len(line) + 1
            if line.strip():
                try:
                    doc = json.loads(line)
                    rec = LogRecord(
                        session_id=str(doc["session_id"]),
                        seq=int(doc["seq"]),
                        event=SessionEvent.from_dict(doc["event"]),
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    if line_end - 1 >= len(raw):
                        # torn final line from a crash mid-append: the write
                        # was never acknowledged, so discard it.
                        break
                    raise IoError(
                        f"corrupt record in {EVENTS_FILE} at byte {offset}: {exc}"
                    ) from exc
                records.append(rec)
                good_end = min(line_end, len(raw))
            offset = line_end
        if good_end < len(raw):
            try:
                os.truncate(path, good_end)
            except OSError as exc:
                raise _wrap_os_error(exc, EVENTS_FILE) from exc
        return records

    def _recover(self, records: list[LogRecord]) -> dict[str, BuilderSession]:
        by_session: dict[str, list[SessionEvent]] = {}
        for rec in records:
            events = by_session.setdefault(rec.session_id, [])
            if rec.seq != len(events):
                raise IoError(
                    f"sequence gap in {EVENTS_FILE}: session {rec.session_id} "
                    f"expected seq {len(events)}, found {rec.seq}"
                )
            events.append(rec.event)

        snapshot: dict[str, Any] = {}
        snap_path = self.root / SNAPSHOT_FILE
        if snap_path.exists():
            try:
                snapshot = json.loads(snap_path.read_text(encoding="utf-8"))
            except (OSError, ValueError):
                snapshot = {}  # stale/corrupt snapshot: fall back to replay

        sessions: dict[str, BuilderSession] = {}
        snap_sessions = snapshot.get("sessions", {})
        snap_applied = snapshot.get("applied", {})
        for sid, events in by_session.items():
            applied = snap_applied.get(sid)
            state = snap_sessions.get(sid)
            session: BuilderSession | None = None
            if state is not None and isinstance(applied, int) and 0 < applied <= len(events):
                try:
                    session = deserialize_session(state, self.pack)
                except (KeyError, ValueError, TypeError):
                    session = None
                if session is not None:
                    session.events = list(events)
                    for event in events[applied:]:
                        apply_event(session, event)
            if session is None:
                session = replay(events, self.pack)
            sessions[sid] = session
            self._next_seq[sid] = len(events)
            if session.status is SessionStatus.COMPLETED:
                self._terminal.add(sid)
            self._session_user[sid] = session.user_id
        return sessions


# --------------------------------------------------------------------------
# bearer tokens
# --------------------------------------------------------------------------

def _token_digest(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TokenRecord:
    user_id: str
    admin: bool
    minted_at: int


class TokenRegistry:
    """Tokens are random, shown once at mint time, and stored only hashed."""

    def __init__(self, path: str | os.PathLike[str]):
        self.path = Path(path)
        self._records: dict[str, TokenRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        try:
            doc = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise IoError(f"unreadable token file {self.path}: {exc}") from exc
        self._records = {
            digest: TokenRecord(
                user_id=str(rec["user_id"]),
                admin=bool(rec.get("admin", False)),
                minted_at=int(rec.get("minted_at", 0)),
            )
            for digest, rec in doc.items()
        }

    def mint(self, user_id: str, *, admin: bool = False, now: int | None = None) -> str:
        if not user_id:
            raise ValueError("user_id must be nonempty")
        token = "pf_" + secrets.token_urlsafe(24)
        self._records[_token_digest(token)] = TokenRecord(
            user_id=user_id, admin=admin, minted_at=_now_ms() if now is None else now
        )
        self._save()
        return token

    def lookup(self, token: str) -> TokenRecord:
        digest = _token_digest(token)
        rec = self._records.get(digest)
        if rec is None:
            # tokens may have been minted by the admin CLI since we loaded
            self._load()
            rec = self._records.get(digest)
        if rec is None:
            raise AuthError("unknown or revoked token")
        return rec

    def _save(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        doc = {
            digest: {"user_id": r.user_id, "admin": r.admin, "minted_at": r.minted_at}
            for digest, r in self._records.items()
        }
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
            os.replace(tmp, self.path)
        except OSError as exc:
            raise _wrap_os_error(exc, TOKENS_FILE) from exc


# --------------------------------------------------------------------------
# idempotency records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IdempotencyRecord:
    key: str
    body_digest: str
    status_code: int
    response_body: str
    created_at: int


class IdempotencyLog:
    """Replay cache for mutating requests, keyed by client-supplied keys.

    A replayed request (same key, same body) gets the stored response back
    verbatim without re-executing the operation; the same key with a
    different body is a client bug and is rejected.  Records expire after
    24 hours and are dropped on load.
    """

    def __init__(self, path: str | os.PathLike[str], *, ttl_ms: int = IDEMPOTENCY_TTL_MS):
        self.path = Path(path)
        self.ttl_ms = ttl_ms
        self._records: dict[str, IdempotencyRecord] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            now = _now_ms()
            try:
                text = self.path.read_text(encoding="utf-8")
            except OSError as exc:
                raise IoError(f"unreadable idempotency log: {exc}") from exc
            for line in text.splitlines():
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                    rec = IdempotencyRecord(
                        key=str(doc["key"]),
                        body_digest=str(doc["body_digest"]),
                        status_code=int(doc["status_code"]),
                        response_body=str(doc["response_body"]),
                        created_at=int(doc["created_at"]),
                    )
                except (ValueError, KeyError, TypeError):
                    continue  # torn line: that response was never sent
                if now - rec.created_at <= self.ttl_ms:
                    self._records[rec.key] = rec
            self._rewrite()

    @staticmethod
    def body_digest(body: bytes) -> str:
        return hashlib.sha256(body).hexdigest()

    def lookup(self, key: str, body_digest: str, *, now: int | None = None) -> IdempotencyRecord | None:
        now = _now_ms() if now is None else now
        with self._lock:
            rec = self._records.get(key)
            if rec is None:
                return None
            if now - rec.created_at > self.ttl_ms:
                del self._records[key]
                return None
            if rec.body_digest != body_digest:
                raise IdempotencyConflict(
                    "idempotency key reused with a different request body", key=key
                )
            return rec

    def record(
        self,
        key: str,
        body_digest: str,
        status_code: int,
        response_body: str,
        *,
        now: int | None = None,
    ) -> None:
        rec = IdempotencyRecord(
            key=key,
            body_digest=body_digest,
            status_code=status_code,
            response_body=response_body,
            created_at=_now_ms() if now is None else now,
        )
        with self._lock:
            self._records[key] = rec
            line = json.dumps(
                {
                    "key": rec.key,
                    "body_digest": rec.body_digest,
                    "status_code": rec.status_code,
                    "response_body": rec.response_body,
                    "created_at": rec.created_at,
                },
                separators=(",", ":"),
            )
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise _wrap_os_error(exc, IDEMPOTENCY_FILE) from exc

    def _rewrite(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        lines = [
            json.dumps(
                {
                    "key": r.key,
                    "body_digest": r.body_digest,
                    "status_code": r.status_code,
                    "response_body": r.response_body,
                    "created_at": r.created_at,
                },
                separators=(",", ":"),
            )
            for r in self._records.values()
        ]
        try:
            tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
            os.replace(tmp, self.path)
        except OSError as exc:
            raise _wrap_os_error(exc, IDEMPOTENCY_FILE) from exc
