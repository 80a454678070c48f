"""Exporters for the two model-input formats, plus baseline predictors.

The BIO side turns each click decision into a sequence-labeling example over
a flattened dialog context; the causal side renders whole sessions as plain
text with PREDICT targets. Both read finished logs only, so exports are pure
functions of (corpus, config) and byte-stable across runs.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ConstraintViolation, MeepError, UnalignableQuery, UnfittedPredictor
from .evaluation import PredictionExample, extract_decisions
from .logfile import SessionLogFile, entry_to_json
from .places import FIELD_ORDER, FieldKind, FieldValue
from .session import (
    ACTION,
    PARAMETER,
    QUERY,
    AgentUtteranceEntry,
    ApiCallEntry,
    Arg,
    ClickDecision,
    InitEntry,
    Literal,
    LogEntry,
    SOURCE_VAR,
    StartDrivingEntry,
    TokenSpan,
    UserEntry,
    VarField,
    Variable,
    WaitEntry,
)
from .templates import format_value

CLS = "[CLS]"
SEP = "[SEP]"
USER_MARK = "[USER]"
AGENT_MARK = "[AGENT]"
VAR_MARK = "[VAR]"
PARAM_MARK = "[PARAM]"

OUTSIDE = "O"


@dataclass(frozen=True)
class ExportConfig:
    history: int = 10  # max [AGENT] items kept in the dialog context
    include_vars: bool = True  # variable blocks in action/query contexts
    use_variable_names: bool = False  # causal: refs instead of literal values
    underscores_to_spaces: bool = False  # causal: identifiers lose underscores


# ---------------------------------------------------------------------------
# Context assembly.  A context is a flat token list; provenance back-pointers
# let the decoders map labeled tokens to the clickable thing they stand for.
# Provenance values: ("user", utterance_no, token_index) on user tokens,
# ("cand", var_id, field_kind) on candidate-block tokens, None elsewhere.


Provenance = tuple | None


@dataclass
class ContextString:
    tokens: list[str]
    provenance: list[Provenance]

    def append(self, token: str, origin: Provenance = None) -> None:
        self.tokens.append(token)
        self.provenance.append(origin)

    def extend(self, tokens: Iterable[str], origin: Provenance = None) -> None:
        for tok in tokens:
            self.append(tok, origin)


@dataclass(frozen=True)
class BioExample:
    context: ContextString
    labels: list[str]
    task: str  # action | query | parameter
    gold: ClickDecision

    def to_json(self) -> dict:
        return {"task": self.task, "tokens": list(self.context.tokens), "labels": list(self.labels)}


def _spaced(name: str) -> str:
    return name.replace("_", " ")


def _value_tokens(value: FieldValue) -> list[str]:
    return format_value(value).split()


def _field_pairs(var: Variable, kinds: Sequence[FieldKind]) -> list[tuple[str, FieldValue]]:
    return [(k.value, var.fields[k]) for k in kinds if k in var.fields]


def _block_field_order(var: Variable) -> list[FieldKind]:
    """Name leads a variable block; the rest keep canonical field order."""
    kinds = [k for k in FIELD_ORDER if k in var.fields]
    if FieldKind.NAME in kinds:
        kinds.remove(FieldKind.NAME)
        kinds.insert(0, FieldKind.NAME)
    return kinds


def _emit_var_block(ctx: ContextString, var: Variable) -> None:
    ctx.append(VAR_MARK)
    ctx.append(var.id)
    first = True
    for key, value in _field_pairs(var, _block_field_order(var)):
        if not first:
            ctx.append(",")
        first = False
        ctx.append(key)
        ctx.append("=")
        ctx.extend(_value_tokens(value))


DESCRIPTOR_KINDS = (FieldKind.NAME, FieldKind.NEIGHBORHOOD, FieldKind.LOCALITY)


def _emit_candidate_block(ctx: ContextString, var: Variable, kind: FieldKind) -> None:
    """One selectable (variable, field) pair: "[VAR] v1 latitude | name = ..."."""
    origin = ("cand", var.id, kind.value)
    ctx.append(VAR_MARK, origin)
    ctx.append(var.id, origin)
    ctx.append(kind.value, origin)
    ctx.append("|", origin)
    pairs = _field_pairs(var, DESCRIPTOR_KINDS)
    if not any(key == "name" for key, _ in pairs):
        pairs.insert(0, ("name", var.id))
    first = True
    for key, value in pairs:
        if not first:
            ctx.append(",", origin)
        first = False
        ctx.append(key, origin)
        ctx.append("=", origin)
        ctx.extend(_value_tokens(value), origin)


def _source_var(entry: InitEntry) -> Variable:
    return Variable(
        SOURCE_VAR,
        {
            FieldKind.ADDRESS: entry.address,
            FieldKind.LATITUDE: entry.latitude,
            FieldKind.LONGITUDE: entry.longitude,
        },
    )


def _entry_vars(entry: ApiCallEntry) -> list[Variable]:
    return [Variable(vid, dict(res)) for vid, res in zip(entry.var_ids, entry.results)]


@dataclass
class _Item:
    """One windowable context unit: a user utterance, an agent action, or the
    variable block(s) an action produced."""

    kind: str  # "user" | "agent" | "vars"
    emit: Callable[[ContextString], None]


def _dialog_items(
    entries: Sequence[LogEntry],
    config: ExportConfig,
    candidate_kinds: frozenset[FieldKind] | None,
) -> list[_Item]:
    """Flatten entries into context items.

    When candidate_kinds is set (parameter task), variable blocks switch to
    candidate form filtered to those kinds; otherwise they render in full,
    subject to config.include_vars.
    """
    items: list[_Item] = []
    utterance_no = 0

    def add_vars(variables: list[Variable]) -> None:
        if candidate_kinds is not None:
            allowed = [
                (var, kind)
                for var in variables
                for kind in FIELD_ORDER
                if kind in candidate_kinds and kind in var.fields
            ]
            if allowed:
                items.append(_Item("vars", lambda ctx, a=allowed: [
                    _emit_candidate_block(ctx, var, kind) for var, kind in a
                ]))
        elif config.include_vars:
            items.append(_Item("vars", lambda ctx, v=variables: [
                _emit_var_block(ctx, var) for var in v
            ]))

    for entry in entries:
        if isinstance(entry, InitEntry):
            if candidate_kinds is not None:
                add_vars([_source_var(entry)])
        elif isinstance(entry, UserEntry):
            utterance_no += 1
            u = utterance_no

            def emit_user(ctx: ContextString, entry=entry, u=u) -> None:
                ctx.append(USER_MARK)
                for i, tok in enumerate(entry.tokens):
                    ctx.append(tok, ("user", u, i))

            items.append(_Item("user", emit_user))
        elif isinstance(entry, ApiCallEntry):
            items.append(_Item("agent", lambda ctx, e=entry: ctx.extend([AGENT_MARK, e.api])))
            if entry.error is None:
                add_vars(_entry_vars(entry))
        elif isinstance(entry, AgentUtteranceEntry):
            items.append(_Item("agent", lambda ctx, e=entry: ctx.extend([AGENT_MARK, *e.text.split()])))
        elif isinstance(entry, WaitEntry):
            items.append(_Item("agent", lambda ctx: ctx.extend([AGENT_MARK, "wait_for_user"])))
        elif isinstance(entry, StartDrivingEntry):
            items.append(_Item("agent", lambda ctx: ctx.extend([AGENT_MARK, "start_driving"])))
    return items


def _window(items: list[_Item], history: int, keep_vars: bool) -> list[_Item]:
    """Keep the suffix holding at most `history` agent items.

    With keep_vars (the parameter task), variable blocks from before the cut
    survive: they are selectable state, not dialog history, and a candidate
    must stay on the board however old its producing call is."""
    agent_positions = [i for i, item in enumerate(items) if item.kind == "agent"]
    if len(agent_positions) <= history:
        return items
    cut = agent_positions[-history]
    kept = items[cut:]
    if keep_vars:
        kept = [item for item in items[:cut] if item.kind == "vars"] + kept
    return kept


def _assemble(
    entries: Sequence[LogEntry],
    config: ExportConfig,
    temporal: Callable[[ContextString], None] | None,
    candidate_kinds: frozenset[FieldKind] | None = None,
) -> ContextString:
    ctx = ContextString([], [])
    ctx.append(CLS)
    items = _dialog_items(entries, config, candidate_kinds)
    for item in _window(items, config.history, keep_vars=candidate_kinds is not None):
        item.emit(ctx)
    ctx.append(SEP)
    if temporal is not None:
        temporal(ctx)
    return ctx


# ---------------------------------------------------------------------------
# Constraint mining: which field kinds have ever been the gold answer for a
# given (action, slot) position.  Used to filter parameter candidates.


Constraints = dict[tuple[str, int], frozenset[FieldKind]]


def _param_ref(payload: str) -> tuple[str, FieldKind]:
    if "+" in payload or "." not in payload:
        raise MeepError(f"parameter payload {payload!r} is not a variable field")
    var, kind = payload.rsplit(".", 1)
    return var, FieldKind(kind)


def _slot_index(example: PredictionExample) -> int:
    return len(example.pending) - 1


def mine_constraints(logs: Iterable[SessionLogFile]) -> Constraints:
    observed: dict[tuple[str, int], set[FieldKind]] = {}
    for log in logs:
        for example in extract_decisions(log):
            if example.gold.category != PARAMETER:
                continue
            action = example.pending[0].payload
            _, kind = _param_ref(example.gold.payload)
            observed.setdefault((action, _slot_index(example)), set()).add(kind)
    return {key: frozenset(kinds) for key, kinds in observed.items()}


# ---------------------------------------------------------------------------
# The three example builders.


def _temporal_tokens(pending: Sequence[ClickDecision]) -> list[str]:
    """Render committed decisions of the current action for the temporal
    context: the action name (API names lose their underscores), then one
    [PARAM] per argument already filled."""
    action = pending[0]
    from .session import APIS  # local import to keep module load order simple

    if action.payload in APIS:
        name = _spaced(action.payload)
    else:
        name = action.payload
    tokens = [AGENT_MARK, *name.split()]
    for decision in pending[1:]:
        tokens.append(PARAM_MARK)
        if decision.category == QUERY:
            tokens.extend(decision.payload.split())
        else:
            var, kind = _param_ref(decision.payload)
            tokens.extend([var, kind.value])
    return tokens


def build_action_example(example: PredictionExample, config: ExportConfig | None = None) -> BioExample:
    config = config or ExportConfig()
    ctx = _assemble(example.entries, config, temporal=None)
    labels = [OUTSIDE] * len(ctx.tokens)
    labels[0] = f"B-{example.gold.payload}"
    return BioExample(ctx, labels, "action", example.gold)


def build_query_example(example: PredictionExample, config: ExportConfig | None = None) -> BioExample:
    config = config or ExportConfig()
    temporal_tokens = _temporal_tokens(example.pending)
    ctx = _assemble(example.entries, config, temporal=lambda c: c.extend(temporal_tokens))
    labels = [OUTSIDE] * len(ctx.tokens)
    wanted = example.gold.payload.split()
    slots: list[int] = []
    cursor = len(wanted) - 1
    for i in range(len(ctx.tokens) - 1, -1, -1):
        if cursor < 0:
            break
        origin = ctx.provenance[i]
        if origin and origin[0] == "user" and ctx.tokens[i] == wanted[cursor]:
            slots.append(i)
            cursor -= 1
    if cursor >= 0:
        raise UnalignableQuery(
            f"query {example.gold.payload!r} not locatable in the context window"
        )
    slots.reverse()
    prev = None
    for i in slots:
        labels[i] = "I-QUERY" if prev == i - 1 else "B-QUERY"
        prev = i
    return BioExample(ctx, labels, "query", example.gold)


def build_param_example(
    example: PredictionExample,
    constraints: Constraints,
    config: ExportConfig | None = None,
) -> BioExample:
    config = config or ExportConfig()
    action = example.pending[0].payload
    allowed = constraints.get((action, _slot_index(example)), frozenset(FIELD_ORDER))
    temporal_tokens = _temporal_tokens(example.pending)
    ctx = _assemble(
        example.entries,
        config,
        temporal=lambda c: c.extend(temporal_tokens),
        candidate_kinds=allowed,
    )
    gold = _param_ref(example.gold.payload)
    gold_origin = ("cand", gold[0], gold[1].value)
    labels = [OUTSIDE] * len(ctx.tokens)
    hits = [i for i, origin in enumerate(ctx.provenance) if origin == gold_origin]
    if not hits:
        raise ConstraintViolation(
            f"gold {example.gold.payload} missing from candidates of {action} "
            f"slot {_slot_index(example)} (allowed kinds {sorted(k.value for k in allowed)})"
        )
    labels[hits[0]] = "B-PARAMETER"
    for i in hits[1:]:
        labels[i] = "I-PARAMETER"
    return BioExample(ctx, labels, "parameter", example.gold)


def check_bio(labels: Sequence[str]) -> bool:
    """BIO well-formedness: every I-x continues a B-x/I-x run of the same x."""
    prev = OUTSIDE
    for label in labels:
        if label.startswith("I-"):
            tag = label[2:]
            if prev not in (f"B-{tag}", f"I-{tag}"):
                return False
        elif label != OUTSIDE and not label.startswith("B-"):
            return False
        prev = label
    return True


def decode_bio(example: BioExample) -> ClickDecision:
    """Recover the click decision a labeled example encodes."""
    if example.task == "action":
        label = example.labels[0]
        if not label.startswith("B-"):
            raise MeepError("action example without a B- label on [CLS]")
        return ClickDecision(ACTION, label[2:])
    hits = [i for i, lab in enumerate(example.labels) if lab != OUTSIDE]
    if not hits:
        raise MeepError(f"{example.task} example carries no labeled span")
    if example.task == "query":
        text = " ".join(example.context.tokens[i] for i in hits)
        return ClickDecision(QUERY, text)
    origin = example.context.provenance[hits[0]]
    if not origin or origin[0] != "cand":
        raise MeepError("parameter label on a non-candidate token")
    return ClickDecision(PARAMETER, f"{origin[1]}.{origin[2]}")


@dataclass
class BioExport:
    examples: list[BioExample]
    skipped_queries: int = 0


def export_bio(
    logs: Sequence[SessionLogFile],
    config: ExportConfig | None = None,
    constraints: Constraints | None = None,
) -> BioExport:
    """All BIO examples of a corpus.  Constraints default to self-mining,
    which by construction never fires ConstraintViolation."""
    config = config or ExportConfig()
    if constraints is None:
        constraints = mine_constraints(logs)
    out = BioExport([])
    for log in logs:
        for example in extract_decisions(log):
            if example.gold.category == ACTION:
                out.examples.append(build_action_example(example, config))
            elif example.gold.category == QUERY:
                try:
                    out.examples.append(build_query_example(example, config))
                except UnalignableQuery:
                    out.skipped_queries += 1
            else:
                out.examples.append(build_param_example(example, constraints, config))
    return out


def save_bio(export: BioExport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example in export.examples:
            fh.write(json.dumps(example.to_json(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Causal plain-text export.


@dataclass(frozen=True)
class CausalTextExample:
    context_text: str
    target_line: str

    def block(self) -> str:
        return f"{self.context_text}\n{self.target_line}"


def _ident(name: str, config: ExportConfig) -> str:
    return _spaced(name) if config.underscores_to_spaces else name


def _latlong(lat: FieldValue, lng: FieldValue) -> str:
    return f"({format_value(lat)}, {format_value(lng)})"


def _var_lines(var: Variable, config: ExportConfig) -> list[str]:
    lines = []
    kinds = [k for k in FIELD_ORDER if k in var.fields]
    skip = set()
    for kind in kinds:
        if kind in skip:
            continue
        if kind is FieldKind.LATITUDE and FieldKind.LONGITUDE in var.fields:
            key = _ident(f"{var.id}_latlong", config)
            lines.append(f"{key} = {_latlong(var.fields[kind], var.fields[FieldKind.LONGITUDE])}")
            skip.add(FieldKind.LONGITUDE)
        else:
            key = _ident(f"{var.id}_{kind.value}", config)
            lines.append(f"{key} = {format_value(var.fields[kind])}")
    return lines


class _CausalState:
    def __init__(self, config: ExportConfig):
        self.config = config
        self.vars: dict[str, Variable] = {}

    def value(self, ref: VarField) -> str:
        return format_value(self.vars[ref.var].fields[ref.kind])

    def param(self, ref: VarField) -> str:
        if self.config.use_variable_names:
            return f"{ref.var} {_ident(ref.kind.value, self.config)}"
        return self.value(ref)

    def pair_param(self, lat: VarField, lng: VarField) -> str | None:
        if self.config.use_variable_names:
            if lat.var == lng.var:
                return f"{lat.var} latlong"
            return None  # different hosts, caller falls back to two params
        return _latlong(self.vars[lat.var].fields[lat.kind], self.vars[lng.var].fields[lng.kind])


def _causal_args(args: Sequence[Arg], state: _CausalState) -> list[str]:
    """[PARAM] payloads with adjacent latitude/longitude pairs folded into
    one coordinate tuple, the way results display them."""
    out: list[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        nxt = args[i + 1] if i + 1 < len(args) else None
        if (
            isinstance(arg, VarField)
            and arg.kind is FieldKind.LATITUDE
            and isinstance(nxt, VarField)
            and nxt.kind is FieldKind.LONGITUDE
        ):
            merged = state.pair_param(arg, nxt)
            if merged is not None:
                out.append(merged)
                i += 2
                continue
        if isinstance(arg, (TokenSpan, Literal)):
            out.append(arg.text)
        else:
            out.append(state.param(arg))
        i += 1
    return out


def _target(action_name: str, params: Sequence[str], config: ExportConfig) -> str:
    parts = [f"[ACTION] {_ident(action_name, config)}"]
    for p in params:
        parts.append(f"[PARAM] {p}")
    return "PREDICT: " + " ".join(parts)


def export_causal_text(log: SessionLogFile, config: ExportConfig | None = None) -> list[CausalTextExample]:
    """One example per agent action, each carrying the full transcript so far."""
    config = config or ExportConfig()
    state = _CausalState(config)
    lines: list[str] = []
    examples: list[CausalTextExample] = []

    def cut(target_line: str) -> None:
        examples.append(CausalTextExample("\n".join(lines), target_line))
        lines.append(target_line)

    for entry in log.entries:
        if isinstance(entry, InitEntry):
            source = _source_var(entry)
            state.vars[source.id] = source
            lines.append(f"{_ident('source_address', config)} = {entry.address}")
            key = _ident("source_latlong", config)
            lines.append(f"{key} = {_latlong(entry.latitude, entry.longitude)}")
        elif isinstance(entry, UserEntry):
            lines.append(f"USER: {entry.text}")
        elif isinstance(entry, ApiCallEntry):
            cut(_target(entry.api, _causal_args(entry.args, state), config))
            for var in _entry_vars(entry):
                state.vars[var.id] = var
                lines.extend(_var_lines(var, config))
        elif isinstance(entry, AgentUtteranceEntry):
            fillers = _causal_args(entry.fillers, state)
            cut(_target(entry.template_id, fillers, config))
            lines.append(f"AGENT: {entry.text}")
        elif isinstance(entry, WaitEntry):
            cut(_target("wait_for_user", [], config))
        elif isinstance(entry, StartDrivingEntry):
            params = _causal_args([entry.latitude_ref, entry.longitude_ref], state)
            cut(_target("start_driving", params, config))
    return examples


def save_causal(examples: Sequence[CausalTextExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(ex.block() for ex in examples))
        if examples:
            fh.write("\n")


# ---------------------------------------------------------------------------
# Baseline predictors.  These exist to give the eval harness non-oracle
# subjects with knowable behavior, not to set any bar.


def _position_class(example: PredictionExample) -> str:
    if not example.entries:
        return "empty"
    return type(example.entries[-1]).__name__


def _content_tokens(tokens: Sequence[str], stopwords: frozenset[str]) -> list[str]:
    out = []
    for tok in tokens:
        word = tok.strip("'\"").casefold()
        if not any(c.isalnum() for c in word):
            continue
        if word in stopwords:
            continue
        out.append(tok)
    return out


def _prefix_tokens(example: PredictionExample) -> list[str]:
    tokens: list[str] = []
    for entry in example.entries:
        tokens.extend(json.dumps(entry_to_json(entry), ensure_ascii=False).split())
    for decision in example.pending:
        tokens.extend([decision.category, *str(decision.payload).split()])
    return tokens


def _exact_key(example: PredictionExample) -> str:
    return "||".join([
        example.session_id,
        str(example.position),
        " ".join(_prefix_tokens(example)),
    ])


def baseline_predictor(
    kind: str,
    train: Sequence[PredictionExample] | None = None,
    stopwords: frozenset[str] | None = None,
) -> Callable[[PredictionExample], ClickDecision]:
    """Fit one of the trivial baselines and return it as a predictor.

    modal_action answers the most frequent training action for the current
    position class; copy_last_query echoes the content words of the latest
    user utterance; nearest_prefix replays the gold of the most token-similar
    training prefix.
    """
    if kind == "copy_last_query":
        if stopwords is None:
            from .agent import load_rules

            stopwords = load_rules().stopwords
        sw = stopwords

        def copy_last_query(example: PredictionExample) -> ClickDecision:
            for entry in reversed(example.entries):
                if isinstance(entry, UserEntry):
                    return ClickDecision(QUERY, " ".join(_content_tokens(entry.tokens, sw)))
            return ClickDecision(QUERY, "")

        return copy_last_query

    if not train:
        raise UnfittedPredictor(f"{kind} needs a non-empty training set")

    if kind == "modal_action":
        by_class: dict[str, Counter] = {}
        overall: Counter = Counter()
        for ex in train:
            if ex.gold.category != ACTION:
                continue
            by_class.setdefault(_position_class(ex), Counter())[ex.gold.payload] += 1
            overall[ex.gold.payload] += 1
        if not overall:
            raise UnfittedPredictor("training set has no action decisions")

        def modal_action(example: PredictionExample) -> ClickDecision:
            counts = by_class.get(_position_class(example), overall)
            return ClickDecision(ACTION, counts.most_common(1)[0][0])

        return modal_action

    if kind == "nearest_prefix":
        bank = [
            (_exact_key(ex), frozenset(_prefix_tokens(ex)), ex.gold)
            for ex in train
        ]

        def nearest_prefix(example: PredictionExample) -> ClickDecision:
            key = _exact_key(example)
            tokens = frozenset(_prefix_tokens(example))
            best_score = -1.0
            best_gold = bank[0][2]
            for cand_key, cand_tokens, gold in bank:
                if cand_key == key:
                    score = 2.0
                else:
                    union = len(tokens | cand_tokens)
                    score = len(tokens & cand_tokens) / union if union else 0.0
                if score > best_score:
                    best_score = score
                    best_gold = gold
            return best_gold

        return nearest_prefix

    raise ValueError(f"unknown baseline kind {kind!r}")


def corpus_examples(logs: Iterable[SessionLogFile]) -> list[PredictionExample]:
    out: list[PredictionExample] = []
    for log in logs:
        out.extend(extract_decisions(log))
    return out
