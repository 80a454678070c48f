"""Session state machine for click-composed agent turns.

A session holds everything both sides can see: the source location, the user
utterances (tokenized so each token is clickable), the variables produced by
api calls, and the ordered entry log.  Agent behaviour is expressed as a small
action grammar; `apply_action` is the single enforcement point, so an action
that violates the grammar can't corrupt state no matter where it came from.

Every accepted action also has a canonical decomposition into click decisions
(the unit all the metrics count), derived on demand from the entries rather
than stored, so live sessions and parsed logs can never disagree.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime

from .errors import (
    ArityError,
    CreateFailed,
    DanglingReference,
    EmptyQuery,
    EmptyUtterance,
    NotFound,
    SchemaError,
    SessionClosed,
    SlotTypeError,
)
from .errors import ApiError as BackendError
from .places import FLOAT_FIELDS, FieldKind, FieldValue
from .templates import TemplateRegistry

# Trailing punctuation split off into tokens of their own, so the user's
# words stay clickable without dragging a "?" along.
DETACH_CHARS = "?!.,"

ACTION = "action"
QUERY = "query"
PARAMETER = "parameter"

SOURCE_VAR = "source"

_TOKEN_ID = re.compile(r"^u(\d+)_(\d+)$")


@dataclass(frozen=True)
class Token:
    """One clickable token: utterance number (1-based), position (0-based)."""

    utterance: int
    index: int
    text: str

    @property
    def id(self) -> str:
        return f"u{self.utterance}_{self.index}"


def parse_token_id(token_id: str) -> tuple[int, int]:
    m = _TOKEN_ID.match(token_id)
    if not m:
        raise SchemaError(f"bad token id {token_id!r}")
    return int(m.group(1)), int(m.group(2))


def tokenize_utterance(text: str, utterance: int) -> list[Token]:
    """Split an utterance into clickable tokens.

    Whitespace separates words; trailing ?, !, . and , are peeled off as
    their own tokens so "Connection?" yields "Connection" and "?".
    """
    pieces: list[str] = []
    for chunk in text.split():
        cut = len(chunk)
        while cut > 0 and chunk[cut - 1] in DETACH_CHARS:
            cut -= 1
        if cut > 0:
            pieces.append(chunk[:cut])
        pieces.extend(chunk[cut:])
    if not pieces:
        raise EmptyUtterance("utterance has no tokens")
    return [Token(utterance, i, piece) for i, piece in enumerate(pieces)]


def detokenize(texts: list[str] | tuple[str, ...]) -> str:
    """Inverse of tokenization up to whitespace: punctuation reattaches."""
    out = ""
    for text in texts:
        if out and text in tuple(DETACH_CHARS):
            out += text
        elif out:
            out += " " + text
        else:
            out = text
    return out


@dataclass(frozen=True)
class TokenSpan:
    """An ordered selection of clicked tokens."""

    tokens: tuple[Token, ...]

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)

    @property
    def ref(self) -> str:
        return "+".join(t.id for t in self.tokens)


@dataclass(frozen=True)
class VarField:
    """A click on one field chip of a variable, e.g. v1.name."""

    var: str
    kind: FieldKind

    @property
    def ref(self) -> str:
        return f"{self.var}.{self.kind.value}"


@dataclass(frozen=True)
class Literal:
    """Free text standing in for a query.  Only query slots accept it; every
    other argument must be an actual click."""

    text: str


Arg = TokenSpan | VarField | Literal

QUERY_SLOT = "query"
ApiSlot = FieldKind | str  # a FieldKind, or the literal QUERY_SLOT marker


@dataclass(frozen=True)
class ApiSpec:
    name: str
    slots: tuple[ApiSlot, ...]
    many: bool = False  # whether the backend returns a list of results

    @property
    def has_query(self) -> bool:
        return QUERY_SLOT in self.slots


APIS: dict[str, ApiSpec] = {
    spec.name: spec
    for spec in (
        ApiSpec(
            "find_place",
            (QUERY_SLOT, FieldKind.LATITUDE, FieldKind.LONGITUDE),
        ),
        ApiSpec(
            "places_nearby",
            (QUERY_SLOT, FieldKind.LATITUDE, FieldKind.LONGITUDE),
            many=True,
        ),
        ApiSpec("distance_matrix", (FieldKind.ADDRESS, FieldKind.ADDRESS)),
        ApiSpec("get_place_attributes", (FieldKind.PLACE_ID,)),
    )
}


@dataclass(frozen=True)
class CallApi:
    api: str
    args: tuple[Arg, ...]


@dataclass(frozen=True)
class SayTemplate:
    template_id: str
    fillers: tuple[Arg, ...] = ()


@dataclass(frozen=True)
class WaitForUser:
    pass


@dataclass(frozen=True)
class StartDriving:
    latitude: VarField
    longitude: VarField


AgentAction = CallApi | SayTemplate | WaitForUser | StartDriving


@dataclass(frozen=True)
class ClickDecision:
    """One countable decision: what category of click, and its payload.

    A query is one decision no matter how many tokens were clicked to build
    it, so its payload is the resolved string rather than the token refs.
    """

    category: str
    payload: str


@dataclass
class Variable:
    id: str
    fields: dict[FieldKind, FieldValue]

    def value(self, kind: FieldKind) -> FieldValue:
        if kind not in self.fields:
            raise DanglingReference(f"{self.id} has no {kind.value} field")
        return self.fields[kind]


# ---------------------------------------------------------------------------
# Log entries.  These are the only durable record of a session; everything
# else (variables, transcript, decisions) can be rebuilt from them.


@dataclass(frozen=True)
class InitEntry:
    address: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class UserEntry:
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ApiCallEntry:
    api: str
    args: tuple[Arg, ...]
    var_ids: tuple[str, ...]
    results: tuple[dict[FieldKind, FieldValue], ...]
    error: str | None = None


@dataclass(frozen=True)
class AgentUtteranceEntry:
    template_id: str
    pattern: str
    fillers: tuple[Arg, ...]
    text: str


@dataclass(frozen=True)
class WaitEntry:
    pass


@dataclass(frozen=True)
class StartDrivingEntry:
    latitude_ref: VarField
    longitude_ref: VarField
    latitude: float
    longitude: float


@dataclass(frozen=True)
class OutcomeEntry:
    value: str  # "approve" or "disapprove"
    reason: str | None = None


LogEntry = (
    InitEntry
    | UserEntry
    | ApiCallEntry
    | AgentUtteranceEntry
    | WaitEntry
    | StartDrivingEntry
    | OutcomeEntry
)


def decisions_for_entry(entry: LogEntry) -> list[ClickDecision]:
    """Decompose one entry into its click decisions, in click order."""
    out: list[ClickDecision] = []
    if isinstance(entry, ApiCallEntry):
        out.append(ClickDecision(ACTION, entry.api))
        spec = APIS[entry.api]
        for slot, arg in zip(spec.slots, entry.args):
            if slot == QUERY_SLOT:
                assert isinstance(arg, (TokenSpan, Literal))
                out.append(ClickDecision(QUERY, arg.text))
            else:
                assert isinstance(arg, VarField)
                out.append(ClickDecision(PARAMETER, arg.ref))
    elif isinstance(entry, AgentUtteranceEntry):
        out.append(ClickDecision(ACTION, entry.template_id))
        for filler in entry.fillers:
            ref = filler.ref if isinstance(filler, (TokenSpan, VarField)) else filler.text
            out.append(ClickDecision(PARAMETER, ref))
    elif isinstance(entry, WaitEntry):
        out.append(ClickDecision(ACTION, "wait_for_user"))
    elif isinstance(entry, StartDrivingEntry):
        out.append(ClickDecision(ACTION, "start_driving"))
        out.append(ClickDecision(PARAMETER, entry.latitude_ref.ref))
        out.append(ClickDecision(PARAMETER, entry.longitude_ref.ref))
    return out


def session_decisions(entries: list[LogEntry]) -> list[ClickDecision]:
    """All decisions for a session, with implicit waits made explicit.

    Handing the turn back is a decision even when no wait was recorded: one
    is synthesized whenever the user speaks right after agent activity, and
    after a trailing agent utterance at the end of the log.
    """
    wait = ClickDecision(ACTION, "wait_for_user")
    out: list[ClickDecision] = []
    prev: LogEntry | None = None
    for entry in entries:
        if isinstance(entry, UserEntry) and isinstance(
            prev, (ApiCallEntry, AgentUtteranceEntry)
        ):
            out.append(wait)
        out.extend(decisions_for_entry(entry))
        prev = entry
    if isinstance(prev, AgentUtteranceEntry):
        out.append(wait)
    return out


@dataclass(frozen=True)
class SessionMeta:
    session_id: str
    timestamp: str
    backend_id: str
    dataset_version: str


@dataclass
class SessionConfig:
    # Raw token text in template slots is off by default: wizards may only
    # fill slots from variable fields unless a deployment opts in.
    allow_token_fillers: bool = False


@dataclass
class Session:
    meta: SessionMeta
    backend: object
    templates: TemplateRegistry
    config: SessionConfig = field(default_factory=SessionConfig)
    entries: list[LogEntry] = field(default_factory=list)
    variables: dict[str, Variable] = field(default_factory=dict)
    user_turns: list[list[Token]] = field(default_factory=list)
    transcript: list[tuple[str, str]] = field(default_factory=list)
    closed: bool = False
    destination: tuple[float, float] | None = None
    outcome: str | None = None

    # -- views --------------------------------------------------------------

    @property
    def source(self) -> Variable:
        return self.variables[SOURCE_VAR]

    @property
    def driving(self) -> bool:
        """True once navigation started; only an outcome may follow."""
        return self.destination is not None

    @property
    def decisions(self) -> list[ClickDecision]:
        return session_decisions(self.entries)

    def last_turn_text(self) -> str:
        """The agent's current reply: trailing utterances joined with a
        double space, stopping at the most recent user message."""
        texts: list[str] = []
        for entry in reversed(self.entries):
            if isinstance(entry, AgentUtteranceEntry):
                texts.append(entry.text)
            elif isinstance(entry, UserEntry):
                break
        return "  ".join(reversed(texts))

    def token_at(self, utterance: int, index: int) -> Token:
        if not 1 <= utterance <= len(self.user_turns):
            raise DanglingReference(f"no utterance u{utterance}")
        turn = self.user_turns[utterance - 1]
        if not 0 <= index < len(turn):
            raise DanglingReference(f"no token u{utterance}_{index}")
        return turn[index]

    # -- mutation -----------------------------------------------------------

    def _check_open(self) -> None:
        if self.closed:
            raise SessionClosed(f"session {self.meta.session_id} is closed")
        if self.driving:
            raise SessionClosed(
                f"session {self.meta.session_id} is driving; only an outcome may follow"
            )

    def add_user_utterance(self, text: str) -> UserEntry:
        self._check_open()
        tokens = tokenize_utterance(text, utterance=len(self.user_turns) + 1)
        self.user_turns.append(tokens)
        self.transcript.append(("user", text))
        entry = UserEntry(text=text, tokens=tuple(t.text for t in tokens))
        self.entries.append(entry)
        return entry

    def _next_var_id(self) -> str:
        return f"v{sum(1 for v in self.variables if v != SOURCE_VAR) + 1}"

    def _verify_span(self, span: TokenSpan) -> None:
        if not span.tokens:
            raise EmptyQuery("token span is empty")
        for tok in span.tokens:
            recorded = self.token_at(tok.utterance, tok.index)
            if recorded.text != tok.text:
                raise DanglingReference(
                    f"token {tok.id} reads {recorded.text!r}, not {tok.text!r}"
                )

    def _resolve_field(self, ref: VarField) -> FieldValue:
        var = self.variables.get(ref.var)
        if var is None:
            raise DanglingReference(f"no variable {ref.var}")
        return var.value(ref.kind)

    def _resolve_api_arg(self, api: str, slot: ApiSlot, arg: Arg) -> FieldValue:
        if slot == QUERY_SLOT:
            if isinstance(arg, TokenSpan):
                self._verify_span(arg)
                text = arg.text
            elif isinstance(arg, Literal):
                text = arg.text
            else:
                raise SlotTypeError(f"{api} query slot can't take a field reference")
            if not text.strip():
                raise EmptyQuery(f"{api} query is empty")
            return text
        if not isinstance(arg, VarField):
            raise SlotTypeError(f"{api} expects a {slot.value} field here")
        if arg.kind != slot:
            raise SlotTypeError(
                f"{api} expects a {slot.value} field, got {arg.kind.value}"
            )
        return self._resolve_field(arg)

    def _store_results(self, raw: list[dict]) -> tuple[tuple[str, ...], tuple[dict, ...]]:
        var_ids = []
        results = []
        for item in raw:
            fields: dict[FieldKind, FieldValue] = {}
            for key, value in item.items():
                try:
                    kind = FieldKind(key)
                except ValueError:
                    continue  # backends may grow fields we don't model yet
                fields[kind] = float(value) if kind in FLOAT_FIELDS else value
            var_id = self._next_var_id()
            self.variables[var_id] = Variable(var_id, fields)
            var_ids.append(var_id)
            results.append(fields)
        return tuple(var_ids), tuple(results)

    def _apply_call(self, action: CallApi) -> ApiCallEntry:
        spec = APIS.get(action.api)
        if spec is None:
            raise SchemaError(f"unknown api {action.api!r}")
        if len(action.args) != len(spec.slots):
            raise ArityError(
                f"{action.api} takes {len(spec.slots)} arguments, got {len(action.args)}"
            )
        values = [
            self._resolve_api_arg(action.api, slot, arg)
            for slot, arg in zip(spec.slots, action.args)
        ]
        error = None
        var_ids: tuple[str, ...] = ()
        results: tuple[dict[FieldKind, FieldValue], ...] = ()
        try:
            raw = getattr(self.backend, action.api)(*values)
        except NotFound:
            error = "not_found"
        except BackendError:
            error = "api_error"
        else:
            var_ids, results = self._store_results(raw if spec.many else [raw])
        entry = ApiCallEntry(
            api=action.api,
            args=tuple(action.args),
            var_ids=var_ids,
            results=results,
            error=error,
        )
        self.entries.append(entry)
        return entry

    def _apply_say(self, action: SayTemplate) -> AgentUtteranceEntry:
        spec = self.templates.get(action.template_id)
        if spec is None:
            raise DanglingReference(f"unknown template {action.template_id!r}")
        values: list[FieldValue] = []
        kinds: list[FieldKind | None] = []
        for filler in action.fillers:
            if isinstance(filler, VarField):
                values.append(self._resolve_field(filler))
                kinds.append(filler.kind)
            elif isinstance(filler, TokenSpan):
                if not self.config.allow_token_fillers:
                    raise SlotTypeError("template slots take variable fields only")
                self._verify_span(filler)
                values.append(filler.text)
                kinds.append(None)
            else:
                raise SlotTypeError("template slots can't take free text")
        spec.check_fillers(kinds)
        text = spec.render(values)
        entry = AgentUtteranceEntry(
            template_id=spec.id,
            pattern=spec.pattern,
            fillers=tuple(action.fillers),
            text=text,
        )
        self.entries.append(entry)
        self.transcript.append(("agent", text))
        return entry

    def _apply_start(self, action: StartDriving) -> StartDrivingEntry:
        for ref, want in (
            (action.latitude, FieldKind.LATITUDE),
            (action.longitude, FieldKind.LONGITUDE),
        ):
            if not isinstance(ref, VarField) or ref.kind != want:
                raise SlotTypeError(f"start_driving needs a {want.value} field")
        lat = float(self._resolve_field(action.latitude))
        lng = float(self._resolve_field(action.longitude))
        entry = StartDrivingEntry(
            latitude_ref=action.latitude,
            longitude_ref=action.longitude,
            latitude=lat,
            longitude=lng,
        )
        self.entries.append(entry)
        self.destination = (lat, lng)
        return entry

    def apply(self, action: AgentAction) -> LogEntry:
        """Validate and execute one agent action, appending its entry.

        Raises before any state changes when the action doesn't fit the
        grammar; a raised action leaves no trace in the log.
        """
        self._check_open()
        if isinstance(action, CallApi):
            return self._apply_call(action)
        if isinstance(action, SayTemplate):
            return self._apply_say(action)
        if isinstance(action, WaitForUser):
            entry = WaitEntry()
            self.entries.append(entry)
            return entry
        if isinstance(action, StartDriving):
            return self._apply_start(action)
        raise SchemaError(f"unknown action {type(action).__name__}")

    def close(self, outcome: str = "disapprove", reason: str | None = None) -> OutcomeEntry:
        """Record the user's verdict (or an abandonment) and seal the session.

        Unlike agent actions this is allowed after StartDriving; it is how a
        drive gets its approve/disapprove, and the last thing a log records.
        """
        if self.closed:
            raise SessionClosed(f"session {self.meta.session_id} is closed")
        if outcome not in ("approve", "disapprove"):
            raise SchemaError(f"bad outcome {outcome!r}")
        entry = OutcomeEntry(value=outcome, reason=reason)
        self.entries.append(entry)
        self.outcome = outcome
        self.closed = True
        return entry


def apply_action(session: Session, action: AgentAction) -> LogEntry:
    return session.apply(action)


def _valid_coords(latitude: float, longitude: float) -> bool:
    return -90.0 <= latitude <= 90.0 and -180.0 <= longitude <= 180.0


def create_session(
    backend,
    address: str | None = None,
    latitude: float | None = None,
    longitude: float | None = None,
    *,
    templates: TemplateRegistry | None = None,
    config: SessionConfig | None = None,
    session_id: str | None = None,
    timestamp: str | None = None,
) -> Session:
    """Open a session anchored at a source location.

    Callers give either an address (geocoded through the backend) or a
    coordinate pair (reverse-labelled to an address); CreateFailed covers
    everything that keeps the source variable from being fully resolved.
    """
    if latitude is not None and longitude is not None:
        if not _valid_coords(latitude, longitude):
            raise CreateFailed(f"coordinates out of range: {latitude}, {longitude}")
        if address is None:
            try:
                address = backend.reverse_address(latitude, longitude)
            except NotFound as exc:
                raise CreateFailed(str(exc)) from exc
    elif address is not None:
        try:
            latitude, longitude = backend.geocode(address)
        except NotFound as exc:
            raise CreateFailed(f"can't resolve source address: {exc}") from exc
    else:
        raise CreateFailed("need a source address or a coordinate pair")

    meta = SessionMeta(
        session_id=session_id or uuid.uuid4().hex[:12],
        timestamp=timestamp or datetime.now().isoformat(timespec="seconds"),
        backend_id=getattr(backend, "backend_id", "unknown"),
        dataset_version=getattr(backend, "dataset_version", "unknown"),
    )
    session = Session(
        meta=meta,
        backend=backend,
        templates=templates if templates is not None else TemplateRegistry.builtin(),
        config=config or SessionConfig(),
    )
    source = Variable(
        SOURCE_VAR,
        {
            FieldKind.ADDRESS: address,
            FieldKind.LATITUDE: float(latitude),
            FieldKind.LONGITUDE: float(longitude),
        },
    )
    session.variables[SOURCE_VAR] = source
    session.entries.append(
        InitEntry(address=address, latitude=float(latitude), longitude=float(longitude))
    )
    return session
