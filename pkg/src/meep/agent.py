"""The hand-built agent: keyword rules over accumulated dialog state.

The agent tracks three things across a dialog: the query (a growing bag of
content words describing the destination), the current offer (the variable
returned by the last successful search), and an optional landmark used for
relative questions.  Keyword rules pick what to do with each user turn:
affirm an offer and drive, answer attribute or landmark questions about it,
or fold new content words into the query and search again.

Everything here is a pure function of the log prefix plus the rule config.
State is never stored; it is refolded from entries on every call, which makes
the agent usable both as a driver for live sessions and as a prediction
function under teacher forcing, with no way for the two to disagree.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .errors import SchemaError
from .places import KM_PER_MILE, FieldKind, haversine_miles
from .session import (
    ACTION,
    PARAMETER,
    QUERY,
    AgentAction,
    AgentUtteranceEntry,
    ApiCallEntry,
    CallApi,
    ClickDecision,
    Literal,
    LogEntry,
    SayTemplate,
    Session,
    StartDriving,
    StartDrivingEntry,
    TokenSpan,
    UserEntry,
    VarField,
    Variable,
    WaitForUser,
    create_session,
)
from .logfile import SessionLogFile

# Builtin template ids the rules speak through (see data/templates.json).
T_PLAIN_OFFER = "t1"      # "There is a {} in {}."
T_OKAY = "t2"             # "Are you okay with that one?"
T_FULL_OFFER = "t6"       # "I found {} on {} in {}. It is {} and {} away."
T_SORRY = "t7"            # "I'm sorry, I couldn't find anything. ..."
T_CLOSING = "t9"          # "Great, we are going to {}."
T_LANDMARK = "t10"        # "{} is {} away from {}."
T_RATING = "t11"          # "It has a rating of {}."
T_OPEN = "t12"            # "It is currently {}."
T_UNSURE = "t13"          # "I'm not sure about that."

_WORDISH = re.compile(r"\w")

APPROVAL_UTTERANCE = "Yes, let's go!"


@dataclass(frozen=True)
class RuleConfig:
    stopwords: frozenset[str]
    affirmations: frozenset[str]
    negations: frozenset[str]
    attribute_rating: frozenset[str]
    attribute_open: frozenset[str]
    landmark_markers: frozenset[str]
    turn_budget: int = 12
    approval_radius_m: float = 150.0

    def __post_init__(self) -> None:
        named = {
            "stopwords": self.stopwords,
            "affirmations": self.affirmations,
            "negations": self.negations,
            "attribute_rating": self.attribute_rating,
            "attribute_open": self.attribute_open,
            "landmark_markers": self.landmark_markers,
        }
        items = list(named.items())
        for i, (name_a, set_a) in enumerate(items):
            for name_b, set_b in items[i + 1 :]:
                both = set_a & set_b
                if both:
                    raise SchemaError(
                        f"keyword sets {name_a} and {name_b} overlap: {sorted(both)}"
                    )

    @property
    def attribute_keywords(self) -> frozenset[str]:
        return self.attribute_rating | self.attribute_open

    @property
    def all_keywords(self) -> frozenset[str]:
        return (
            self.stopwords
            | self.affirmations
            | self.negations
            | self.attribute_keywords
            | self.landmark_markers
        )


def bundled_rules_path() -> Path:
    return Path(__file__).parent / "data" / "rules.json"


def load_rules(path: str | Path | None = None) -> RuleConfig:
    raw = json.loads(Path(path or bundled_rules_path()).read_text(encoding="utf-8"))
    sets = {}
    for key in (
        "stopwords",
        "affirmations",
        "negations",
        "attribute_rating",
        "attribute_open",
        "landmark_markers",
    ):
        words = raw.get(key)
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise SchemaError(f"rules file: {key!r} must be a list of words")
        sets[key] = frozenset(w.casefold() for w in words)
    return RuleConfig(
        turn_budget=int(raw.get("turn_budget", 12)),
        approval_radius_m=float(raw.get("approval_radius_m", 150.0)),
        **sets,
    )


@dataclass(frozen=True)
class AgentState:
    """What the rules remember between turns."""

    query: str = ""
    destination: Variable | None = None
    landmark: Variable | None = None
    phase: str = "awaiting_description"  # offered | confirming | done


def _content_words(tokens: Sequence[str], config: RuleConfig) -> list[str]:
    """Tokens that can contribute to a query: word-like and not keywords."""
    out = []
    for token in tokens:
        if not _WORDISH.search(token):
            continue
        if token.casefold() in config.all_keywords:
            continue
        out.append(token)
    return out


def update_query(query: str, tokens: Sequence[str], config: RuleConfig) -> str:
    """Merge a turn's content words into the query, keeping first spellings.

    Repeats (case-insensitive) are dropped, so refinements append qualifiers
    rather than stacking duplicates; a turn of pure stopwords is a no-op.
    """
    words = query.split()
    seen = {w.casefold() for w in words}
    for token in _content_words(tokens, config):
        folded = token.casefold()
        if folded in seen:
            continue
        words.append(token)
        seen.add(folded)
    return " ".join(words)


@dataclass(frozen=True)
class _Turn:
    user: UserEntry
    suffix: tuple[LogEntry, ...]


def _split_turns(entries: Sequence[LogEntry]) -> list[_Turn]:
    turns: list[_Turn] = []
    current: UserEntry | None = None
    suffix: list[LogEntry] = []
    for entry in entries:
        if isinstance(entry, UserEntry):
            if current is not None:
                turns.append(_Turn(current, tuple(suffix)))
            current = entry
            suffix = []
        elif current is not None:
            suffix.append(entry)
    if current is not None:
        turns.append(_Turn(current, tuple(suffix)))
    return turns


@dataclass(frozen=True)
class _Reading:
    """How the rules read one user turn."""

    case: str  # negate | affirm | attribute | landmark | search | fallback
    new_query: str = ""
    attribute: str = ""  # rating | open
    landmark_query: str = ""


def classify_turn(state: AgentState, tokens: Sequence[str], config: RuleConfig) -> _Reading:
    folded = [t.casefold() for t in tokens if _WORDISH.search(t)]
    present = set(folded)
    offer_standing = state.destination is not None and state.phase in ("offered", "confirming")

    if present & config.negations:
        new_query = update_query(state.query, tokens, config)
        return _Reading("negate", new_query=new_query)
    if offer_standing and present & config.affirmations:
        return _Reading("affirm")
    if offer_standing and present & config.attribute_keywords:
        which = "rating" if present & config.attribute_rating else "open"
        return _Reading("attribute", attribute=which)
    if offer_standing and present & config.landmark_markers:
        words = [t for t in tokens if _WORDISH.search(t)]
        marker_at = next(
            i for i, w in enumerate(words) if w.casefold() in config.landmark_markers
        )
        desc = " ".join(_content_words(words[marker_at + 1 :], config))
        if desc:
            return _Reading("landmark", landmark_query=desc)
        return _Reading("fallback")
    new_query = update_query(state.query, tokens, config)
    if new_query != state.query:
        return _Reading("search", new_query=new_query)
    return _Reading("fallback")


def _call_result(entry: LogEntry | None) -> Variable | None:
    """The variable created by a successful ApiCall entry, if any."""
    if isinstance(entry, ApiCallEntry) and entry.error is None and entry.var_ids:
        return Variable(entry.var_ids[0], dict(entry.results[0]))
    return None


def _advance(state: AgentState, turn: _Turn, config: RuleConfig) -> AgentState:
    """Fold one completed turn into the state."""
    reading = classify_turn(state, turn.user.tokens, config)
    if reading.case == "negate":
        state = replace(
            state, destination=None, landmark=None, phase="awaiting_description",
            query=reading.new_query,
        )
        found = _call_result(turn.suffix[0] if turn.suffix else None)
        if found is not None:
            state = replace(state, destination=found, phase="offered")
        return state
    if reading.case == "affirm":
        return replace(state, phase="done")
    if reading.case == "attribute":
        return replace(state, phase="confirming")
    if reading.case == "landmark":
        found = _call_result(turn.suffix[0] if turn.suffix else None)
        if found is not None:
            state = replace(state, landmark=found)
        return replace(state, phase="confirming")
    if reading.case == "search":
        state = replace(state, query=reading.new_query)
        found = _call_result(turn.suffix[0] if turn.suffix else None)
        if found is not None:
            state = replace(state, destination=found, phase="offered")
        return state
    return state


def state_from_entries(entries: Sequence[LogEntry], config: RuleConfig) -> AgentState:
    state = AgentState()
    for turn in _split_turns(entries):
        state = _advance(state, turn, config)
    return state


def _offer_say(found: Variable) -> SayTemplate:
    """Offer reply: the full sentence when street data exists, else the
    short form (which gets its own confirmation question)."""
    fields = found.fields
    area = (
        FieldKind.NEIGHBORHOOD if FieldKind.NEIGHBORHOOD in fields else FieldKind.LOCALITY
    )
    if FieldKind.STREET_NAME in fields:
        return SayTemplate(
            T_FULL_OFFER,
            (
                VarField(found.id, FieldKind.NAME),
                VarField(found.id, FieldKind.STREET_NAME),
                VarField(found.id, area),
                VarField(found.id, FieldKind.DURATION),
                VarField(found.id, FieldKind.DISTANCE),
            ),
        )
    return SayTemplate(
        T_PLAIN_OFFER,
        (VarField(found.id, FieldKind.NAME), VarField(found.id, area)),
    )


def _search_step(reading: _Reading, suffix: tuple[LogEntry, ...], k: int) -> AgentAction:
    if k == 0:
        return CallApi(
            "find_place",
            (
                Literal(reading.new_query),
                VarField("source", FieldKind.LATITUDE),
                VarField("source", FieldKind.LONGITUDE),
            ),
        )
    found = _call_result(suffix[0])
    if found is None:
        return SayTemplate(T_SORRY) if k == 1 else WaitForUser()
    if k == 1:
        return _offer_say(found)
    if k == 2 and isinstance(suffix[1], AgentUtteranceEntry) and suffix[1].template_id == T_PLAIN_OFFER:
        return SayTemplate(T_OKAY)
    return WaitForUser()


def next_action(entries: Sequence[LogEntry], config: RuleConfig) -> AgentAction:
    """The agent's next move given the log so far.

    Position within the current turn is simply how many agent entries follow
    the last user utterance; branches read the outcomes already recorded
    there, so no backend access happens here.
    """
    turns = _split_turns(entries)
    if not turns:
        return WaitForUser()
    state = AgentState()
    for turn in turns[:-1]:
        state = _advance(state, turn, config)
    current = turns[-1]
    reading = classify_turn(state, current.user.tokens, config)
    suffix = current.suffix
    k = len(suffix)

    if reading.case in ("search", "negate"):
        if reading.case == "negate" and reading.new_query == state.query:
            # Offer rejected with nothing new to go on.
            return SayTemplate(T_SORRY) if k == 0 else WaitForUser()
        return _search_step(reading, suffix, k)

    if reading.case == "affirm":
        destination = state.destination
        assert destination is not None
        if k == 0:
            return SayTemplate(T_CLOSING, (VarField(destination.id, FieldKind.NAME),))
        return StartDriving(
            VarField(destination.id, FieldKind.LATITUDE),
            VarField(destination.id, FieldKind.LONGITUDE),
        )

    if reading.case == "attribute":
        destination = state.destination
        assert destination is not None
        if k == 0:
            return CallApi(
                "get_place_attributes",
                (VarField(destination.id, FieldKind.PLACE_ID),),
            )
        attrs = _call_result(suffix[0])
        if k == 1:
            if reading.attribute == "rating" and attrs and FieldKind.RATING in attrs.fields:
                return SayTemplate(T_RATING, (VarField(attrs.id, FieldKind.RATING),))
            if reading.attribute == "open" and attrs and FieldKind.OPEN_NOW in attrs.fields:
                return SayTemplate(T_OPEN, (VarField(attrs.id, FieldKind.OPEN_NOW),))
            return SayTemplate(T_UNSURE)
        return WaitForUser()

    if reading.case == "landmark":
        destination = state.destination
        assert destination is not None
        if k == 0:
            return CallApi(
                "find_place",
                (
                    Literal(reading.landmark_query),
                    VarField("source", FieldKind.LATITUDE),
                    VarField("source", FieldKind.LONGITUDE),
                ),
            )
        landmark = _call_result(suffix[0])
        if landmark is None:
            return SayTemplate(T_SORRY) if k == 1 else WaitForUser()
        if k == 1:
            return CallApi(
                "distance_matrix",
                (
                    VarField(destination.id, FieldKind.ADDRESS),
                    VarField(landmark.id, FieldKind.ADDRESS),
                ),
            )
        measure = _call_result(suffix[1])
        if k == 2:
            if measure is None:
                return SayTemplate(T_UNSURE)
            return SayTemplate(
                T_LANDMARK,
                (
                    VarField(destination.id, FieldKind.NAME),
                    VarField(measure.id, FieldKind.DISTANCE),
                    VarField(landmark.id, FieldKind.NAME),
                ),
            )
        return WaitForUser()

    # fallback
    return SayTemplate(T_SORRY) if k == 0 else WaitForUser()


def action_decisions(action: AgentAction) -> list[ClickDecision]:
    """Decompose an action into the decisions that would compose it."""
    if isinstance(action, CallApi):
        out = [ClickDecision(ACTION, action.api)]
        for arg in action.args:
            if isinstance(arg, (TokenSpan, Literal)):
                out.append(ClickDecision(QUERY, arg.text))
            else:
                out.append(ClickDecision(PARAMETER, arg.ref))
        return out
    if isinstance(action, SayTemplate):
        out = [ClickDecision(ACTION, action.template_id)]
        for filler in action.fillers:
            ref = filler.ref if isinstance(filler, (TokenSpan, VarField)) else filler.text
            out.append(ClickDecision(PARAMETER, ref))
        return out
    if isinstance(action, StartDriving):
        return [
            ClickDecision(ACTION, "start_driving"),
            ClickDecision(PARAMETER, action.latitude.ref),
            ClickDecision(PARAMETER, action.longitude.ref),
        ]
    return [ClickDecision(ACTION, "wait_for_user")]


def rule_predictor(config: RuleConfig | None = None):
    """Adapt the rules to the decision-level predictor interface."""
    rules = config or load_rules()

    def predict(example) -> ClickDecision:
        action = next_action(example.entries, rules)
        decisions = action_decisions(action)
        index = min(len(example.pending), len(decisions) - 1)
        return decisions[index]

    return predict


# ---------------------------------------------------------------------------
# Scripted dialogs: a deterministic user-side policy for running the agent
# offline, mirroring how live evaluation sessions are conducted.


@dataclass(frozen=True)
class CaseSpec:
    source_address: str
    first_utterance: str
    followups: tuple[str, ...]
    target_latitude: float
    target_longitude: float
    note: str = ""


def bundled_cases_path() -> Path:
    return Path(__file__).parent / "data" / "cases.jsonl"


def load_cases(path: str | Path | None = None) -> list[CaseSpec]:
    cases = []
    text = Path(path or bundled_cases_path()).read_text(encoding="utf-8")
    for i, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"bad JSON: {exc}", line=i) from exc
        missing = {
            "source_address", "first_utterance", "followups",
            "target_latitude", "target_longitude",
        } - set(obj)
        if missing:
            raise SchemaError(f"case missing keys {sorted(missing)}", line=i)
        cases.append(
            CaseSpec(
                source_address=obj["source_address"],
                first_utterance=obj["first_utterance"],
                followups=tuple(obj["followups"]),
                target_latitude=float(obj["target_latitude"]),
                target_longitude=float(obj["target_longitude"]),
                note=obj.get("note", ""),
            )
        )
    return cases


def _offer_distance_m(state: AgentState, case: CaseSpec) -> float | None:
    if state.destination is None:
        return None
    fields = state.destination.fields
    if FieldKind.LATITUDE not in fields or FieldKind.LONGITUDE not in fields:
        return None
    miles = haversine_miles(
        float(fields[FieldKind.LATITUDE]),
        float(fields[FieldKind.LONGITUDE]),
        case.target_latitude,
        case.target_longitude,
    )
    return miles * KM_PER_MILE * 1000


def scripted_user(
    entries: Sequence[LogEntry], case: CaseSpec, config: RuleConfig
) -> str | None:
    """What the scripted user says next, or None to give up.

    The policy plays a person who knows where they want to go: speak the
    case's utterances in order, and once they are exhausted, approve as soon
    as the standing offer is the target (within the approval radius).
    """
    n_user = sum(1 for e in entries if isinstance(e, UserEntry))
    if n_user == 0:
        return case.first_utterance
    consumed = n_user - 1
    if consumed < len(case.followups):
        return case.followups[consumed]
    state = state_from_entries(entries, config)
    if state.phase in ("offered", "confirming"):
        distance = _offer_distance_m(state, case)
        if distance is not None and distance <= config.approval_radius_m:
            return APPROVAL_UTTERANCE
    return None


def drive_agent(session: Session, config: RuleConfig, max_actions: int = 16) -> None:
    """Run the rules until they yield the turn or start driving."""
    for _ in range(max_actions):
        action = next_action(session.entries, config)
        session.apply(action)
        if isinstance(action, (WaitForUser, StartDriving)):
            return
    raise SchemaError("agent did not yield within the per-turn action budget")


def run_scripted_dialog(
    case: CaseSpec,
    backend,
    config: RuleConfig | None = None,
    *,
    session_id: str | None = None,
    timestamp: str | None = None,
) -> SessionLogFile:
    """Play one case end to end and return the finished log.

    The outcome is computed, not scripted: approve iff the agent started
    driving within the turn budget and landed inside the approval radius of
    the case's target.
    """
    rules = config or load_rules()
    session = create_session(
        backend,
        address=case.source_address,
        session_id=session_id,
        timestamp=timestamp,
    )
    for _ in range(rules.turn_budget):
        text = scripted_user(session.entries, case, rules)
        if text is None:
            break
        session.add_user_utterance(text)
        drive_agent(session, rules)
        if session.driving:
            break
    if session.driving:
        lat, lng = session.destination
        miles = haversine_miles(lat, lng, case.target_latitude, case.target_longitude)
        ok = miles * KM_PER_MILE * 1000 <= rules.approval_radius_m
        session.close("approve" if ok else "disapprove")
    else:
        session.close("disapprove", reason="budget")
    return SessionLogFile.from_session(session)


@dataclass
class CaseResult:
    index: int
    note: str
    outcome: str
    turns: int
    log: SessionLogFile


@dataclass
class SuiteReport:
    results: list[CaseResult] = field(default_factory=list)

    @property
    def completion_rate(self) -> float:
        if not self.results:
            return 0.0
        return sum(r.outcome == "approve" for r in self.results) / len(self.results)

    def _avg_turns(self, outcome: str) -> float:
        turns = [r.turns for r in self.results if r.outcome == outcome]
        return sum(turns) / len(turns) if turns else 0.0

    @property
    def avg_turns_success(self) -> float:
        return self._avg_turns("approve")

    @property
    def avg_turns_fail(self) -> float:
        return self._avg_turns("disapprove")

    def format_row(self) -> str:
        return (
            f"completion {100 * self.completion_rate:.1f}%  "
            f"avg turns (success) {self.avg_turns_success:.1f}  "
            f"avg turns (fail) {self.avg_turns_fail:.1f}  "
            f"n={len(self.results)}"
        )


def run_suite(
    cases: Sequence[CaseSpec],
    backend,
    config: RuleConfig | None = None,
    *,
    session_prefix: str = "case",
    timestamp: str = "1970-01-01T00:00:00",
) -> SuiteReport:
    from .evaluation import count_turns

    rules = config or load_rules()
    report = SuiteReport()
    for i, case in enumerate(cases):
        log = run_scripted_dialog(
            case,
            backend,
            rules,
            session_id=f"{session_prefix}-{i:03d}",
            timestamp=timestamp,
        )
        outcome = log.entries[-1].value  # type: ignore[union-attr]
        report.results.append(
            CaseResult(
                index=i,
                note=case.note,
                outcome=outcome,
                turns=count_turns(log.entries),
                log=log,
            )
        )
    return report
