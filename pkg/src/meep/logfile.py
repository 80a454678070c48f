"""On-disk session logs: canonical serialization, validation, replay.

A log file is UTF-8 text: the literal header line "meep-log v1", one JSON
object of session metadata, then one JSON object per entry.  Serialization is
canonical (documented key order, stable float formatting, "\\n" line ends), so
equal sessions produce byte-equal files and parse∘serialize is a fixed point.
The full field-by-field layout lives in FORMAT.md at the repo root.

Replay re-executes every api call against a backend and re-renders every
utterance from its recorded pattern, comparing against what the log recorded;
any mismatch raises ReplayDivergence naming the entry and field.  Recorded
results are authoritative for reconstructed state, so a clean replay returns
a session that serializes back to the original bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ApiError, NotFound, PatternError, ReplayDivergence, SchemaError
from .places import FIELD_ORDER, FLOAT_FIELDS, FieldKind, FieldValue
from .session import (
    APIS,
    QUERY_SLOT,
    SOURCE_VAR,
    AgentUtteranceEntry,
    ApiCallEntry,
    Arg,
    InitEntry,
    Literal,
    LogEntry,
    OutcomeEntry,
    Session,
    SessionConfig,
    SessionMeta,
    StartDrivingEntry,
    Token,
    TokenSpan,
    UserEntry,
    VarField,
    Variable,
    WaitEntry,
    parse_token_id,
    tokenize_utterance,
)
from .templates import TemplateRegistry, render_pattern, validate_pattern

LOG_HEADER = "meep-log v1"

_HEADER_KEYS = ("session_id", "timestamp", "backend_id", "dataset_version")

_API_ERRORS = ("not_found", "api_error")


@dataclass
class SessionLogFile:
    meta: SessionMeta
    entries: list[LogEntry]

    @classmethod
    def from_session(cls, session: Session) -> "SessionLogFile":
        return cls(meta=session.meta, entries=list(session.entries))


# ---------------------------------------------------------------------------
# Writing


def _arg_to_json(arg: Arg) -> dict:
    if isinstance(arg, TokenSpan):
        return {"span": arg.ref}
    if isinstance(arg, VarField):
        return {"field": arg.ref}
    if isinstance(arg, Literal):
        return {"query": arg.text}
    raise SchemaError(f"unserializable argument {arg!r}")


def _result_to_json(result: dict[FieldKind, FieldValue]) -> dict:
    return {kind.value: result[kind] for kind in FIELD_ORDER if kind in result}


def entry_to_json(entry: LogEntry) -> dict:
    if isinstance(entry, InitEntry):
        return {
            "type": "init",
            "address": entry.address,
            "latitude": entry.latitude,
            "longitude": entry.longitude,
        }
    if isinstance(entry, UserEntry):
        return {"type": "user", "text": entry.text, "tokens": list(entry.tokens)}
    if isinstance(entry, ApiCallEntry):
        obj = {
            "type": "api_call",
            "api": entry.api,
            "args": [_arg_to_json(a) for a in entry.args],
            "vars": list(entry.var_ids),
            "results": [_result_to_json(r) for r in entry.results],
        }
        if entry.error is not None:
            obj["error"] = entry.error
        return obj
    if isinstance(entry, AgentUtteranceEntry):
        return {
            "type": "agent_utterance",
            "template": entry.template_id,
            "pattern": entry.pattern,
            "fillers": [_arg_to_json(a) for a in entry.fillers],
            "text": entry.text,
        }
    if isinstance(entry, WaitEntry):
        return {"type": "wait"}
    if isinstance(entry, StartDrivingEntry):
        return {
            "type": "start_driving",
            "latitude_ref": entry.latitude_ref.ref,
            "longitude_ref": entry.longitude_ref.ref,
            "latitude": entry.latitude,
            "longitude": entry.longitude,
        }
    if isinstance(entry, OutcomeEntry):
        obj = {"type": "outcome", "value": entry.value}
        if entry.reason is not None:
            obj["reason"] = entry.reason
        return obj
    raise SchemaError(f"unserializable entry {type(entry).__name__}")


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def serialize(log: SessionLogFile) -> str:
    meta = log.meta
    header = {
        "session_id": meta.session_id,
        "timestamp": meta.timestamp,
        "backend_id": meta.backend_id,
        "dataset_version": meta.dataset_version,
    }
    lines = [LOG_HEADER, _dump(header)]
    lines.extend(_dump(entry_to_json(e)) for e in log.entries)
    return "\n".join(lines) + "\n"


def serialize_session(session: Session) -> str:
    return serialize(SessionLogFile.from_session(session))


def save(log: SessionLogFile, path: str | Path) -> None:
    Path(path).write_text(serialize(log), encoding="utf-8")


# ---------------------------------------------------------------------------
# Parsing + validation.  One forward pass checks structure, ordering, and
# reference closure, building the same token/variable tables a live session
# would have had.


class _Refs:
    """Token and variable state accumulated while walking entries."""

    def __init__(self) -> None:
        self.turn_tokens: list[tuple[str, ...]] = []
        self.var_fields: dict[str, set[FieldKind]] = {}
        self.var_count = 0

    def token(self, token_id: str, line: int) -> Token:
        utterance, index = parse_token_id(token_id)
        if not 1 <= utterance <= len(self.turn_tokens):
            raise SchemaError(f"dangling reference: no utterance u{utterance}", line=line)
        texts = self.turn_tokens[utterance - 1]
        if not 0 <= index < len(texts):
            raise SchemaError(f"dangling reference: no token {token_id}", line=line)
        return Token(utterance, index, texts[index])

    def field_ref(self, ref: str, line: int) -> VarField:
        var, dot, kind_name = ref.partition(".")
        if not dot:
            raise SchemaError(f"bad field reference {ref!r}", line=line)
        try:
            kind = FieldKind(kind_name)
        except ValueError as exc:
            raise SchemaError(f"unknown field kind in {ref!r}", line=line) from exc
        if var not in self.var_fields:
            raise SchemaError(f"dangling reference: no variable {var!r}", line=line)
        if kind not in self.var_fields[var]:
            raise SchemaError(
                f"dangling reference: {var} has no {kind.value} field", line=line
            )
        return VarField(var, kind)


def _require_keys(obj: dict, required: tuple[str, ...], optional: tuple[str, ...], line: int) -> None:
    keys = set(obj)
    missing = set(required) - keys
    if missing:
        raise SchemaError(f"entry missing keys {sorted(missing)}", line=line)
    extra = keys - set(required) - set(optional)
    if extra:
        raise SchemaError(f"entry has unexpected keys {sorted(extra)}", line=line)


def _string(obj: dict, key: str, line: int) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise SchemaError(f"{key!r} must be a string", line=line)
    return value


def _number(obj: dict, key: str, line: int) -> float:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{key!r} must be a number", line=line)
    return float(value)


def _parse_arg(obj: object, refs: _Refs, line: int, allow_query: bool) -> Arg:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise SchemaError("argument must be a single-key object", line=line)
    ((key, value),) = obj.items()
    if not isinstance(value, str):
        raise SchemaError(f"argument {key!r} must be a string", line=line)
    if key == "span":
        ids = value.split("+")
        if not value or not all(ids):
            raise SchemaError("empty token span", line=line)
        try:
            tokens = tuple(refs.token(tid, line) for tid in ids)
        except SchemaError:
            raise
        return TokenSpan(tokens)
    if key == "field":
        return refs.field_ref(value, line)
    if key == "query":
        if not allow_query:
            raise SchemaError("free text can't fill a template slot", line=line)
        return Literal(value)
    raise SchemaError(f"unknown argument form {key!r}", line=line)


def _parse_result(obj: object, line: int) -> dict[FieldKind, FieldValue]:
    if not isinstance(obj, dict):
        raise SchemaError("result must be an object", line=line)
    out: dict[FieldKind, FieldValue] = {}
    for key, value in obj.items():
        try:
            kind = FieldKind(key)
        except ValueError as exc:
            raise SchemaError(f"unknown result field {key!r}", line=line) from exc
        if kind in FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"result field {key!r} must be a number", line=line)
            out[kind] = float(value)
        else:
            if not isinstance(value, str):
                raise SchemaError(f"result field {key!r} must be a string", line=line)
            out[kind] = value
    return out


def _parse_api_call(obj: dict, refs: _Refs, line: int) -> ApiCallEntry:
    _require_keys(obj, ("type", "api", "args", "vars", "results"), ("error",), line)
    api = _string(obj, "api", line)
    spec = APIS.get(api)
    if spec is None:
        raise SchemaError(f"unknown api {api!r}", line=line)
    raw_args = obj["args"]
    if not isinstance(raw_args, list):
        raise SchemaError("'args' must be a list", line=line)
    if len(raw_args) != len(spec.slots):
        raise SchemaError(
            f"{api} takes {len(spec.slots)} arguments, got {len(raw_args)}", line=line
        )
    args = []
    for slot, raw in zip(spec.slots, raw_args):
        arg = _parse_arg(raw, refs, line, allow_query=slot == QUERY_SLOT)
        if slot == QUERY_SLOT:
            if isinstance(arg, VarField):
                raise SchemaError(f"{api} query slot can't take a field reference", line=line)
            if isinstance(arg, Literal) and not arg.text.strip():
                raise SchemaError(f"{api} query is empty", line=line)
        else:
            if not isinstance(arg, VarField):
                raise SchemaError(f"{api} expects a {slot.value} field reference", line=line)
            if arg.kind != slot:
                raise SchemaError(
                    f"{api} expects a {slot.value} field, got {arg.kind.value}", line=line
                )
        args.append(arg)
    error = None
    if "error" in obj:
        error = _string(obj, "error", line)
        if error not in _API_ERRORS:
            raise SchemaError(f"unknown api error code {error!r}", line=line)
    raw_vars = obj["vars"]
    raw_results = obj["results"]
    if not isinstance(raw_vars, list) or not all(isinstance(v, str) for v in raw_vars):
        raise SchemaError("'vars' must be a list of variable ids", line=line)
    if not isinstance(raw_results, list):
        raise SchemaError("'results' must be a list", line=line)
    if len(raw_vars) != len(raw_results):
        raise SchemaError("'vars' and 'results' lengths differ", line=line)
    if error is not None and raw_vars:
        raise SchemaError("a failed call can't produce variables", line=line)
    if error is None and not raw_vars:
        raise SchemaError("a successful call must produce variables", line=line)
    if not spec.many and len(raw_vars) > 1:
        raise SchemaError(f"{api} produces a single variable", line=line)
    results = [_parse_result(r, line) for r in raw_results]
    for var_id in raw_vars:
        expected = f"v{refs.var_count + 1}"
        if var_id != expected:
            raise SchemaError(
                f"variable ids must be sequential: expected {expected}, got {var_id}",
                line=line,
            )
        refs.var_count += 1
    for var_id, result in zip(raw_vars, results):
        refs.var_fields[var_id] = set(result)
    return ApiCallEntry(
        api=api,
        args=tuple(args),
        var_ids=tuple(raw_vars),
        results=tuple(results),
        error=error,
    )


def _parse_agent_utterance(obj: dict, refs: _Refs, line: int) -> AgentUtteranceEntry:
    _require_keys(obj, ("type", "template", "pattern", "fillers", "text"), (), line)
    pattern = _string(obj, "pattern", line)
    try:
        arity = validate_pattern(pattern)
    except PatternError as exc:
        raise SchemaError(f"bad pattern: {exc}", line=line) from exc
    raw_fillers = obj["fillers"]
    if not isinstance(raw_fillers, list):
        raise SchemaError("'fillers' must be a list", line=line)
    if len(raw_fillers) != arity:
        raise SchemaError(
            f"pattern has {arity} slots but {len(raw_fillers)} fillers", line=line
        )
    fillers = tuple(_parse_arg(r, refs, line, allow_query=False) for r in raw_fillers)
    return AgentUtteranceEntry(
        template_id=_string(obj, "template", line),
        pattern=pattern,
        fillers=fillers,
        text=_string(obj, "text", line),
    )


def validate(text: str) -> SessionLogFile:
    """Parse log text, enforcing structure, ordering, and reference closure."""
    if not text.endswith("\n"):
        raise SchemaError("log must end with a newline")
    lines = text[:-1].split("\n")
    if not lines or lines[0] != LOG_HEADER:
        raise SchemaError(f"log must start with {LOG_HEADER!r}", line=1)
    if len(lines) < 2:
        raise SchemaError("missing metadata line", line=2)
    try:
        raw_meta = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad JSON: {exc}", line=2) from exc
    if not isinstance(raw_meta, dict) or set(raw_meta) != set(_HEADER_KEYS):
        raise SchemaError(f"metadata must have keys {list(_HEADER_KEYS)}", line=2)
    for key in _HEADER_KEYS:
        if not isinstance(raw_meta[key], str):
            raise SchemaError(f"metadata {key!r} must be a string", line=2)
    meta = SessionMeta(**{k: raw_meta[k] for k in _HEADER_KEYS})

    refs = _Refs()
    entries: list[LogEntry] = []
    seen_start = False
    seen_outcome = False
    for line_no, raw in enumerate(lines[2:], start=3):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"bad JSON: {exc}", line=line_no) from exc
        if not isinstance(obj, dict) or "type" not in obj:
            raise SchemaError("entry must be an object with a 'type'", line=line_no)
        etype = obj["type"]
        if seen_outcome:
            raise SchemaError("no entries may follow the outcome", line=line_no)
        if seen_start and etype != "outcome":
            raise SchemaError("only an outcome may follow start_driving", line=line_no)
        if not entries and etype != "init":
            raise SchemaError("first entry must be init", line=line_no)

        if etype == "init":
            if entries:
                raise SchemaError("init must be the first and only init", line=line_no)
            _require_keys(obj, ("type", "address", "latitude", "longitude"), (), line_no)
            entry: LogEntry = InitEntry(
                address=_string(obj, "address", line_no),
                latitude=_number(obj, "latitude", line_no),
                longitude=_number(obj, "longitude", line_no),
            )
            refs.var_fields[SOURCE_VAR] = {
                FieldKind.ADDRESS,
                FieldKind.LATITUDE,
                FieldKind.LONGITUDE,
            }
        elif etype == "user":
            _require_keys(obj, ("type", "text", "tokens"), (), line_no)
            raw_tokens = obj["tokens"]
            if not isinstance(raw_tokens, list) or not all(
                isinstance(t, str) for t in raw_tokens
            ):
                raise SchemaError("'tokens' must be a list of strings", line=line_no)
            if not raw_tokens:
                raise SchemaError("utterance has no tokens", line=line_no)
            entry = UserEntry(text=_string(obj, "text", line_no), tokens=tuple(raw_tokens))
            refs.turn_tokens.append(tuple(raw_tokens))
        elif etype == "api_call":
            entry = _parse_api_call(obj, refs, line_no)
        elif etype == "agent_utterance":
            entry = _parse_agent_utterance(obj, refs, line_no)
        elif etype == "wait":
            _require_keys(obj, ("type",), (), line_no)
            entry = WaitEntry()
        elif etype == "start_driving":
            _require_keys(
                obj,
                ("type", "latitude_ref", "longitude_ref", "latitude", "longitude"),
                (),
                line_no,
            )
            lat_ref = refs.field_ref(_string(obj, "latitude_ref", line_no), line_no)
            lng_ref = refs.field_ref(_string(obj, "longitude_ref", line_no), line_no)
            if lat_ref.kind != FieldKind.LATITUDE:
                raise SchemaError("latitude_ref must point at a latitude field", line=line_no)
            if lng_ref.kind != FieldKind.LONGITUDE:
                raise SchemaError("longitude_ref must point at a longitude field", line=line_no)
            entry = StartDrivingEntry(
                latitude_ref=lat_ref,
                longitude_ref=lng_ref,
                latitude=_number(obj, "latitude", line_no),
                longitude=_number(obj, "longitude", line_no),
            )
            seen_start = True
        elif etype == "outcome":
            _require_keys(obj, ("type", "value"), ("reason",), line_no)
            value = _string(obj, "value", line_no)
            if value not in ("approve", "disapprove"):
                raise SchemaError(f"bad outcome {value!r}", line=line_no)
            reason = _string(obj, "reason", line_no) if "reason" in obj else None
            entry = OutcomeEntry(value=value, reason=reason)
            seen_outcome = True
        else:
            raise SchemaError(f"unknown entry type {etype!r}", line=line_no)
        entries.append(entry)

    if not entries:
        raise SchemaError("log has no entries", line=3)
    return SessionLogFile(meta=meta, entries=entries)


def load(path: str | Path) -> SessionLogFile:
    return validate(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Replay


def _divergence(index: int, field: str, expected: object, actual: object) -> ReplayDivergence:
    return ReplayDivergence(index, field, str(expected), str(actual))


def _replay_call(session: Session, entry: ApiCallEntry, index: int) -> None:
    spec = APIS[entry.api]
    values = [
        session._resolve_api_arg(entry.api, slot, arg)
        for slot, arg in zip(spec.slots, entry.args)
    ]
    error = None
    fresh: list[dict[FieldKind, FieldValue]] = []
    try:
        raw = getattr(session.backend, entry.api)(*values)
    except NotFound:
        error = "not_found"
    except ApiError:
        error = "api_error"
    else:
        for item in raw if spec.many else [raw]:
            fields: dict[FieldKind, FieldValue] = {}
            for key, value in item.items():
                try:
                    kind = FieldKind(key)
                except ValueError:
                    continue
                fields[kind] = float(value) if kind in FLOAT_FIELDS else value
            fresh.append(fields)
    if error != entry.error:
        raise _divergence(index, "error", entry.error or "ok", error or "ok")
    if entry.error is None:
        if len(fresh) != len(entry.results):
            raise _divergence(index, "results", len(entry.results), len(fresh))
        for var_id, recorded, got in zip(entry.var_ids, entry.results, fresh):
            for kind in FIELD_ORDER:
                if recorded.get(kind) == got.get(kind):
                    continue
                raise _divergence(
                    index,
                    f"{var_id}.{kind.value}",
                    recorded.get(kind, "<absent>"),
                    got.get(kind, "<absent>"),
                )
    for var_id, recorded in zip(entry.var_ids, entry.results):
        session.variables[var_id] = Variable(var_id, dict(recorded))


def replay(
    log: SessionLogFile,
    backend,
    *,
    allow_dataset_mismatch: bool = False,
) -> Session:
    """Re-execute a validated log against a backend, verifying as we go.

    The recorded entries are kept as state (they already passed verification)
    so the returned session serializes back to the input bytes.  Rendering is
    driven by each entry's pattern snapshot, not a template registry: ids in
    a log are only meaningful relative to the registry that produced them.
    """
    backend_version = getattr(backend, "dataset_version", "unknown")
    if not allow_dataset_mismatch and backend_version != log.meta.dataset_version:
        raise SchemaError(
            f"log was recorded against dataset {log.meta.dataset_version!r}, "
            f"backend has {backend_version!r}"
        )
    session = Session(
        meta=log.meta,
        backend=backend,
        templates=TemplateRegistry.empty(),
        config=SessionConfig(allow_token_fillers=True),
    )
    for index, entry in enumerate(log.entries):
        if isinstance(entry, InitEntry):
            session.variables[SOURCE_VAR] = Variable(
                SOURCE_VAR,
                {
                    FieldKind.ADDRESS: entry.address,
                    FieldKind.LATITUDE: entry.latitude,
                    FieldKind.LONGITUDE: entry.longitude,
                },
            )
        elif isinstance(entry, UserEntry):
            tokens = tokenize_utterance(entry.text, len(session.user_turns) + 1)
            texts = tuple(t.text for t in tokens)
            if texts != entry.tokens:
                raise _divergence(index, "tokens", list(entry.tokens), list(texts))
            session.user_turns.append(tokens)
            session.transcript.append(("user", entry.text))
        elif isinstance(entry, ApiCallEntry):
            _replay_call(session, entry, index)
        elif isinstance(entry, AgentUtteranceEntry):
            values = []
            for filler in entry.fillers:
                if isinstance(filler, VarField):
                    values.append(session._resolve_field(filler))
                else:
                    assert isinstance(filler, TokenSpan)
                    session._verify_span(filler)
                    values.append(filler.text)
            rendered = render_pattern(entry.pattern, values)
            if rendered != entry.text:
                raise _divergence(index, "text", entry.text, rendered)
            session.transcript.append(("agent", rendered))
        elif isinstance(entry, StartDrivingEntry):
            lat = float(session._resolve_field(entry.latitude_ref))
            lng = float(session._resolve_field(entry.longitude_ref))
            if lat != entry.latitude:
                raise _divergence(index, "latitude", entry.latitude, lat)
            if lng != entry.longitude:
                raise _divergence(index, "longitude", entry.longitude, lng)
            session.destination = (lat, lng)
        elif isinstance(entry, OutcomeEntry):
            session.outcome = entry.value
            session.closed = True
        session.entries.append(entry)
    return session
