"""Networked session host.

The core (SessionHost) is transport-free and synchronous: it owns the
sessions, enforces the click grammar by delegating every mutation to the
session layer, spools each log as it grows, and fans envelopes out to
registered listeners. A thin FastAPI layer (build_app) exposes it over
full-duplex sockets plus a few admin endpoints; tests drive the core
directly or through the app, both paths share all validation.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from dataclasses import dataclass, field as dc_field
from datetime import datetime
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, HTTPException, Response, WebSocket, WebSocketDisconnect

from .errors import CreateFailed, MeepError, SchemaError
from .evaluation import PredictionExample, WAIT_DECISION
from .logfile import LOG_HEADER, entry_to_json, serialize_session
from .places import FieldKind
from .session import (
    ACTION,
    APIS,
    AgentAction,
    CallApi,
    ClickDecision,
    Literal,
    PARAMETER,
    QUERY,
    QUERY_SLOT,
    SayTemplate,
    Session,
    StartDriving,
    Token,
    TokenSpan,
    UserEntry,
    VarField,
    WaitForUser,
    create_session,
    parse_token_id,
)
from .templates import TemplateRegistry, TemplateSpec

log = logging.getLogger(__name__)

PROTO = "meep-proto v1"
ROLES = ("user", "agent")

# Wire kinds a client may send, and who may send them.
CLIENT_KINDS = {
    "user_utterance": "user",
    "outcome": "user",
    "click": "agent",
    "commit_action": "agent",
    "template_created": "agent",
}

IDLE_TIMEOUT_SECONDS = 30 * 60
MAX_ACTIONS_PER_TURN = 16

Predictor = Callable[[PredictionExample], ClickDecision]
Listener = Callable[[dict], None]


def _now() -> datetime:
    return datetime.now()


# ---------------------------------------------------------------------------
# Wire codecs.  Args reuse the log encoding ({"span"}/{"field"}/{"query"}),
# so a client that can read logs can speak the wire format.


def _require(obj: dict, key: str, types) -> object:
    if key not in obj:
        raise SchemaError(f"message body is missing {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise SchemaError(f"{key!r} has the wrong type")
    return value


def _parse_field_ref(ref: str) -> VarField:
    if not isinstance(ref, str) or "." not in ref:
        raise SchemaError(f"bad field reference {ref!r}")
    var, _, kind = ref.rpartition(".")
    try:
        return VarField(var, FieldKind(kind))
    except ValueError as exc:
        raise SchemaError(f"unknown field kind in {ref!r}") from exc


def _parse_wire_arg(raw: object, session: Session):
    if not isinstance(raw, dict) or len(raw) != 1:
        raise SchemaError("each argument must be a single-key object")
    key, value = next(iter(raw.items()))
    if key == "query":
        if not isinstance(value, str):
            raise SchemaError("query argument must be a string")
        return Literal(value)
    if key == "field":
        return _parse_field_ref(value)
    if key == "span":
        if not isinstance(value, str) or not value:
            raise SchemaError("span argument must be a non-empty string")
        tokens: list[Token] = []
        for token_id in value.split("+"):
            utterance, index = parse_token_id(token_id)
            tokens.append(session.token_at(utterance, index))
        return TokenSpan(tuple(tokens))
    raise SchemaError(f"unknown argument form {key!r}")


def action_from_json(body: dict, session: Session) -> AgentAction:
    """Decode a commit_action body into an action, validating shape only;
    semantic checks (arity, slot kinds, dangling refs) stay in the session."""
    kind = _require(body, "action", str)
    if kind == "wait_for_user":
        return WaitForUser()
    if kind == "start_driving":
        return StartDriving(
            _parse_field_ref(_require(body, "latitude", str)),
            _parse_field_ref(_require(body, "longitude", str)),
        )
    if kind == "call_api":
        api = _require(body, "api", str)
        raw_args = _require(body, "args", list)
        return CallApi(api, tuple(_parse_wire_arg(a, session) for a in raw_args))
    if kind == "say_template":
        template = _require(body, "template", str)
        raw_fillers = _require(body, "fillers", list)
        return SayTemplate(template, tuple(_parse_wire_arg(a, session) for a in raw_fillers))
    raise SchemaError(f"unknown action kind {kind!r}")


def template_to_json(spec: TemplateSpec) -> dict:
    return {
        "id": spec.id,
        "pattern": spec.pattern,
        "slot_types": [sorted(k.value for k in slot) for slot in spec.slot_types],
        "origin": spec.origin,
    }


ENTRY_KINDS = {
    "user": "user_utterance",
    "api_call": "api_result",
    "agent_utterance": "agent_utterance",
    "wait": "wait",
    "start_driving": "start_driving",
    "outcome": "outcome",
}


# ---------------------------------------------------------------------------
# Hosted sessions.


@dataclass
class Participant:
    role: str
    send: Listener


@dataclass
class HostedSession:
    session: Session
    path: Path
    lock: threading.RLock = dc_field(default_factory=threading.RLock)
    seq: int = 0
    written: int = 0
    participants: list[Participant] = dc_field(default_factory=list)
    auto_agent: Predictor | None = None
    decisions_made: int = 0
    last_activity: datetime = dc_field(default_factory=_now)

    @property
    def status(self) -> str:
        return "closed" if self.session.closed else "open"


class SessionHost:
    """All live sessions plus the shared template registry and the spool."""

    def __init__(
        self,
        backend,
        spool_dir: str | Path,
        *,
        templates: TemplateRegistry | None = None,
        clock: Callable[[], datetime] | None = None,
        idle_timeout: float = IDLE_TIMEOUT_SECONDS,
    ):
        self.backend = backend
        self.spool = Path(spool_dir)
        self.spool.mkdir(parents=True, exist_ok=True)
        self.registry = templates or TemplateRegistry.builtin()
        self.clock = clock or _now
        self.idle_timeout = idle_timeout
        self.sessions: dict[str, HostedSession] = {}
        self._lock = threading.RLock()

    # -- lifecycle ----------------------------------------------------------

    def create(
        self,
        address: str | None = None,
        latitude: float | None = None,
        longitude: float | None = None,
        session_id: str | None = None,
    ) -> str:
        session = create_session(
            self.backend,
            address=address,
            latitude=latitude,
            longitude=longitude,
            templates=self.registry,
            session_id=session_id,
            timestamp=self.clock().isoformat(timespec="seconds"),
        )
        sid = session.meta.session_id
        with self._lock:
            if sid in self.sessions:
                raise CreateFailed(f"session id {sid!r} already exists")
            hosted = HostedSession(
                session=session,
                path=self.spool / f"{sid}.log",
                last_activity=self.clock(),
            )
            self.sessions[sid] = hosted
        with hosted.lock:
            hosted.path.write_text(
                f"{LOG_HEADER}\n{json.dumps(entry_meta(session), ensure_ascii=False)}\n",
                encoding="utf-8",
            )
            self._flush(hosted)
        self._index_event({"session": sid, "event": "created"})
        return sid

    def get(self, session_id: str) -> HostedSession:
        with self._lock:
            hosted = self.sessions.get(session_id)
        if hosted is None:
            raise SchemaError(f"no session {session_id!r}")
        return hosted

    def listing(self) -> list[dict]:
        with self._lock:
            hosted_list = list(self.sessions.items())
        out = []
        for sid, hosted in hosted_list:
            with hosted.lock:
                out.append(
                    {
                        "session": sid,
                        "status": hosted.status,
                        "participants": sorted(p.role for p in hosted.participants),
                        "automatic_agent": hosted.auto_agent is not None,
                    }
                )
        return out

    def log_text(self, session_id: str) -> str:
        hosted = self.get(session_id)
        with hosted.lock:
            return serialize_session(hosted.session)

    # -- wiring -------------------------------------------------------------

    def attach_listener(self, session_id: str, role: str, send: Listener) -> Participant:
        if role not in ROLES:
            raise SchemaError(f"unknown role {role!r}")
        hosted = self.get(session_id)
        participant = Participant(role, send)
        with hosted.lock:
            hosted.participants.append(participant)
        return participant

    def detach_listener(self, session_id: str, participant: Participant) -> None:
        try:
            hosted = self.get(session_id)
        except SchemaError:
            return
        with hosted.lock:
            if participant in hosted.participants:
                hosted.participants.remove(participant)

    def hello(self, session_id: str, role: str) -> dict:
        hosted = self.get(session_id)
        with hosted.lock:
            return {
                "proto": PROTO,
                "session": session_id,
                "role": role,
                "log": serialize_session(hosted.session),
                "templates": [template_to_json(t) for t in self.registry],
            }

    # -- message handling ---------------------------------------------------

    def handle_frame(self, session_id: str, role: str, frame: object) -> None:
        """One inbound wire message.  Never raises for bad client input; the
        sender gets an error envelope instead and the session stays intact."""
        hosted = self.get(session_id)
        try:
            with hosted.lock:
                self._dispatch(hosted, role, frame)
        except MeepError as exc:
            self._send_error(hosted, role, exc)

    def _dispatch(self, hosted: HostedSession, role: str, frame: object) -> None:
        if not isinstance(frame, dict):
            raise SchemaError("frames must be objects")
        kind = frame.get("kind")
        if not isinstance(kind, str):
            raise SchemaError("frame is missing its kind")
        if kind == "ping":
            return  # liveness only; answered at the transport layer
        allowed = CLIENT_KINDS.get(kind)
        if allowed is None:
            raise SchemaError(f"unknown message kind {kind!r}")
        if role != allowed:
            raise SchemaError(f"{kind} is not valid from the {role} seat")
        body = frame.get("body", {})
        if not isinstance(body, dict):
            raise SchemaError("body must be an object")
        hosted.last_activity = self.clock()

        if kind == "user_utterance":
            self._user_utterance(hosted, body)
        elif kind == "outcome":
            self._outcome(hosted, body)
        elif kind == "click":
            # partial construction: ephemeral, mirrored but never persisted
            self._broadcast(hosted, "agent", "click", dict(body))
        elif kind == "commit_action":
            action = action_from_json(body, hosted.session)
            self._commit(hosted, action)
        elif kind == "template_created":
            pattern = _require(body, "pattern", str)
            slot_types = body.get("slot_types")
            if slot_types is not None and not isinstance(slot_types, list):
                raise SchemaError("slot_types must be a list when present")
            spec = self.registry.add(pattern, slot_types)
            self._broadcast(hosted, "agent", "template_created", template_to_json(spec))

    def _user_utterance(self, hosted: HostedSession, body: dict) -> None:
        text = _require(body, "text", str)
        entry = hosted.session.add_user_utterance(text)
        self._flush(hosted)
        utterance_no = sum(isinstance(e, UserEntry) for e in hosted.session.entries)
        payload = entry_to_json(entry)
        payload["token_ids"] = [f"u{utterance_no}_{i}" for i in range(len(entry.tokens))]
        self._broadcast(hosted, "user", "user_utterance", payload)
        if hosted.auto_agent is not None:
            self._drive_auto_agent(hosted)

    def _outcome(self, hosted: HostedSession, body: dict) -> None:
        value = _require(body, "value", str)
        reason = body.get("reason")
        if reason is not None and not isinstance(reason, str):
            raise SchemaError("reason must be a string when present")
        entry = hosted.session.close(value, reason=reason)
        self._flush(hosted)
        self._broadcast(hosted, "user", "outcome", entry_to_json(entry))
        self._index_event({"session": hosted.session.meta.session_id, "event": "closed", "outcome": value})

    def _commit(self, hosted: HostedSession, action: AgentAction) -> None:
        entry = hosted.session.apply(action)
        self._flush(hosted)
        kind = ENTRY_KINDS[entry_to_json(entry)["type"]]
        self._broadcast(hosted, "agent", kind, entry_to_json(entry))
        if isinstance(action, StartDriving):
            self._broadcast(hosted, "system", "outcome_request", {})

    def commit_action(self, session_id: str, action: AgentAction) -> None:
        """Direct (non-wire) commit used by tests and embedded agents."""
        hosted = self.get(session_id)
        with hosted.lock:
            hosted.last_activity = self.clock()
            self._commit(hosted, action)

    def post_user_utterance(self, session_id: str, text: str) -> None:
        hosted = self.get(session_id)
        with hosted.lock:
            hosted.last_activity = self.clock()
            self._user_utterance(hosted, {"text": text})

    def post_outcome(self, session_id: str, value: str, reason: str | None = None) -> None:
        hosted = self.get(session_id)
        with hosted.lock:
            hosted.last_activity = self.clock()
            body: dict = {"value": value}
            if reason is not None:
                body["reason"] = reason
            self._outcome(hosted, body)

    # -- automatic agent ----------------------------------------------------

    def attach_automatic_agent(self, session_id: str, predictor: Predictor) -> None:
        hosted = self.get(session_id)
        with hosted.lock:
            if hosted.auto_agent is not None:
                raise SchemaError("the agent seat is taken")
            hosted.auto_agent = predictor
            if hosted.session.entries and isinstance(hosted.session.entries[-1], UserEntry):
                self._drive_auto_agent(hosted)

    def _predict(self, hosted: HostedSession, pending: tuple[ClickDecision, ...]) -> ClickDecision:
        example = PredictionExample(
            entries=tuple(hosted.session.entries),
            pending=pending,
            gold=WAIT_DECISION,  # placeholder: live prediction has no gold
            session_id=hosted.session.meta.session_id,
            position=hosted.decisions_made,
        )
        decision = hosted.auto_agent(example)
        hosted.decisions_made += 1
        return decision

    def _assemble_action(self, hosted: HostedSession) -> AgentAction:
        """Drive the predictor decision by decision until an action is fully
        specified, mirroring how a wizard's clicks accumulate into a commit."""
        first = self._predict(hosted, ())
        if first.category != ACTION:
            raise SchemaError(f"expected an action decision, got {first.category}")
        name = first.payload
        if name == "wait_for_user":
            return WaitForUser()
        pending = [first]

        def next_payload(expect: str) -> str:
            decision = self._predict(hosted, tuple(pending))
            if decision.category != expect:
                raise SchemaError(f"expected a {expect} decision, got {decision.category}")
            pending.append(decision)
            return decision.payload

        if name == "start_driving":
            return StartDriving(
                _parse_field_ref(next_payload(PARAMETER)),
                _parse_field_ref(next_payload(PARAMETER)),
            )
        if name in APIS:
            args = []
            for slot in APIS[name].slots:
                if slot == QUERY_SLOT:
                    args.append(Literal(next_payload(QUERY)))
                else:
                    args.append(_parse_field_ref(next_payload(PARAMETER)))
            return CallApi(name, tuple(args))
        spec = self.registry.get(name)
        if spec is None:
            raise SchemaError(f"predictor chose unknown action {name!r}")
        fillers = [_parse_field_ref(next_payload(PARAMETER)) for _ in range(spec.arity)]
        return SayTemplate(name, tuple(fillers))

    def _drive_auto_agent(self, hosted: HostedSession) -> None:
        """Predictor loop: one committed action per iteration, stopping at a
        hand-back or navigation.  Any invalid prediction downgrades to a wait
        so a broken model can never wedge or corrupt a session."""
        for _ in range(MAX_ACTIONS_PER_TURN):
            if hosted.session.closed or hosted.session.driving:
                return
            try:
                action = self._assemble_action(hosted)
                self._commit(hosted, action)
            except MeepError as exc:
                log.warning("automatic agent faulted: %s", exc)
                try:
                    self._commit(hosted, WaitForUser())
                except MeepError:
                    pass
                return
            if isinstance(action, WaitForUser):
                return
        log.warning("automatic agent hit the per-turn action cap")
        try:
            self._commit(hosted, WaitForUser())
        except MeepError:
            pass

    # -- idle sweep ---------------------------------------------------------

    def sweep_idle(self) -> list[str]:
        """Close sessions idle past the timeout as disapprove(absent)."""
        now = self.clock()
        swept = []
        with self._lock:
            candidates = list(self.sessions.items())
        for sid, hosted in candidates:
            with hosted.lock:
                if hosted.session.closed:
                    continue
                if (now - hosted.last_activity).total_seconds() <= self.idle_timeout:
                    continue
                entry = hosted.session.close("disapprove", reason="absent")
                self._flush(hosted)
                self._broadcast(hosted, "system", "outcome", entry_to_json(entry))
                self._index_event({"session": sid, "event": "closed", "outcome": "disapprove"})
                swept.append(sid)
        return swept

    # -- plumbing -----------------------------------------------------------

    def _flush(self, hosted: HostedSession) -> None:
        entries = hosted.session.entries
        if hosted.written >= len(entries):
            return
        with open(hosted.path, "a", encoding="utf-8") as fh:
            for entry in entries[hosted.written:]:
                fh.write(json.dumps(entry_to_json(entry), ensure_ascii=False) + "\n")
        hosted.written = len(entries)

    def _envelope(self, hosted: HostedSession, sender: str, kind: str, body: dict) -> dict:
        hosted.seq += 1
        return {
            "session": hosted.session.meta.session_id,
            "seq": hosted.seq,
            "sender": sender,
            "kind": kind,
            "body": body,
        }

    def _broadcast(self, hosted: HostedSession, sender: str, kind: str, body: dict) -> None:
        envelope = self._envelope(hosted, sender, kind, body)
        for participant in list(hosted.participants):
            try:
                participant.send(envelope)
            except Exception:  # a dead socket must not poison the session
                log.exception("listener failed; dropping it")
                hosted.participants.remove(participant)

    def _send_error(self, hosted: HostedSession, role: str, exc: MeepError) -> None:
        with hosted.lock:
            envelope = self._envelope(
                hosted,
                "system",
                "error",
                {"error": type(exc).__name__, "message": str(exc)},
            )
            for participant in list(hosted.participants):
                if participant.role == role:
                    try:
                        participant.send(envelope)
                    except Exception:
                        log.exception("listener failed; dropping it")
                        hosted.participants.remove(participant)

    def _index_event(self, event: dict) -> None:
        record = dict(event)
        record["timestamp"] = self.clock().isoformat(timespec="seconds")
        with self._lock:
            with open(self.spool / "index.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def entry_meta(session: Session) -> dict:
    meta = session.meta
    return {
        "session_id": meta.session_id,
        "timestamp": meta.timestamp,
        "backend_id": meta.backend_id,
        "dataset_version": meta.dataset_version,
    }


# ---------------------------------------------------------------------------
# FastAPI layer.


def build_app(host: SessionHost) -> FastAPI:
    app = FastAPI(title="meep session host")
    app.state.host = host

    @app.post("/sessions")
    def create_session_endpoint(body: dict):
        try:
            sid = host.create(
                address=body.get("address"),
                latitude=body.get("latitude"),
                longitude=body.get("longitude"),
                session_id=body.get("session_id"),
            )
        except MeepError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"session": sid}

    @app.get("/sessions")
    def list_sessions():
        return host.listing()

    @app.get("/sessions/{session_id}/log")
    def session_log(session_id: str):
        try:
            text = host.log_text(session_id)
        except SchemaError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=text, media_type="text/plain; charset=utf-8")

    @app.get("/templates")
    def templates():
        return {"templates": [template_to_json(t) for t in host.registry]}

    @app.post("/sessions/{session_id}/agent")
    def attach_agent(session_id: str, body: dict | None = None):
        name = (body or {}).get("predictor", "rule")
        if name != "rule":
            raise HTTPException(status_code=400, detail=f"unknown predictor {name!r}")
        from .agent import rule_predictor

        try:
            host.attach_automatic_agent(session_id, rule_predictor())
        except SchemaError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"attached": True}

    @app.websocket("/ws/{session_id}")
    async def ws_endpoint(websocket: WebSocket, session_id: str):
        role = websocket.query_params.get("role", "")
        if role not in ROLES:
            await websocket.close(code=4400)
            return
        try:
            hello = host.hello(session_id, role)
        except SchemaError:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        await websocket.send_text(json.dumps(hello, ensure_ascii=False))

        loop = asyncio.get_running_loop()
        queue: asyncio.Queue = asyncio.Queue()

        def send(envelope: dict) -> None:
            loop.call_soon_threadsafe(queue.put_nowait, envelope)

        participant = host.attach_listener(session_id, role, send)

        async def pump() -> None:
            while True:
                envelope = await queue.get()
                await websocket.send_text(json.dumps(envelope, ensure_ascii=False))

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    frame = json.loads(raw)
                except json.JSONDecodeError:
                    frame = raw  # handled as a bad frame below
                if isinstance(frame, dict) and frame.get("kind") == "ping":
                    await websocket.send_text(json.dumps({"kind": "pong"}))
                    continue
                await asyncio.to_thread(host.handle_frame, session_id, role, frame)
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            host.detach_listener(session_id, participant)

    return app
