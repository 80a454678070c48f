"""Response templates: patterns with {} slots, typed by field kind.

Templates are the only way the agent produces language beyond what it can
compose from clicks, so the registry is append-only and every pattern is
validated up front.  Rendering knows one smoothing trick: when a filler like
"10 mins" lands directly before a word meaning the same unit, the unit is
dropped from the filler so the sentence doesn't stutter ("10 minutes away"
rather than "10 mins minutes away").
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ArityError, PatternError, SlotTypeError
from .places import FieldKind, FieldValue

# Words that name the same measurement unit.  Used only for the rendering
# dedup described above; matching is case-insensitive.
UNIT_SYNONYMS: tuple[frozenset[str], ...] = (
    frozenset({"min", "mins", "minute", "minutes"}),
    frozenset({"mi", "mile", "miles"}),
    frozenset({"ft", "foot", "feet"}),
    frozenset({"hr", "hrs", "hour", "hours"}),
)

_VALUE_WITH_UNIT = re.compile(r"^(-?\d+(?:\.\d+)?)\s+([A-Za-z]+)$")
_LEADING_WORD = re.compile(r"^\W*?([A-Za-z]+)")


def _unit_class(word: str) -> frozenset[str] | None:
    lowered = word.lower()
    for cls in UNIT_SYNONYMS:
        if lowered in cls:
            return cls
    return None


def validate_pattern(pattern: str) -> int:
    """Check slot syntax and return the arity.

    Slots are exactly the two-character sequence "{}"; any other brace use is
    an authoring mistake we want to reject before the template is saved.
    """
    if not pattern.strip():
        raise PatternError("pattern is empty")
    arity = 0
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "{":
            if i + 1 >= len(pattern) or pattern[i + 1] != "}":
                raise PatternError(f"unmatched '{{' at index {i}")
            arity += 1
            i += 2
            continue
        if ch == "}":
            raise PatternError(f"unmatched '}}' at index {i}")
        i += 1
    return arity


def format_value(value: FieldValue) -> str:
    if isinstance(value, str):
        return value
    return repr(value)


def render_pattern(
    pattern: str,
    values: list[FieldValue] | tuple[FieldValue, ...],
    kinds: list[FieldKind | None] | tuple[FieldKind | None, ...] | None = None,
) -> str:
    """Substitute values into a validated pattern, deduplicating units.

    `kinds` is accepted for symmetry with slot checking but rendering itself
    only looks at the value text, so unconstrained slots behave the same.
    """
    arity = validate_pattern(pattern)
    if len(values) != arity:
        raise ArityError(f"pattern has {arity} slots, got {len(values)} fillers")
    parts = pattern.split("{}")
    out = [parts[0]]
    for value, tail in zip(values, parts[1:]):
        text = format_value(value)
        m = _VALUE_WITH_UNIT.match(text)
        if m:
            unit_cls = _unit_class(m.group(2))
            next_word = _LEADING_WORD.match(tail)
            if unit_cls is not None and next_word and next_word.group(1).lower() in unit_cls:
                text = m.group(1)
        out.append(text)
        out.append(tail)
    return "".join(out)


@dataclass(frozen=True)
class TemplateSpec:
    id: str
    pattern: str
    slot_types: tuple[frozenset[FieldKind], ...]
    origin: str = "builtin"

    @property
    def arity(self) -> int:
        return len(self.slot_types)

    def check_fillers(self, kinds: list[FieldKind | None] | tuple[FieldKind | None, ...]) -> None:
        """Raise unless the filler kinds are acceptable for each slot.

        A kind of None means the filler is raw token text, which only fits
        slots that don't constrain their type.
        """
        if len(kinds) != self.arity:
            raise ArityError(
                f"template {self.id} takes {self.arity} fillers, got {len(kinds)}"
            )
        for i, (allowed, kind) in enumerate(zip(self.slot_types, kinds)):
            if not allowed:
                continue
            if kind is None:
                raise SlotTypeError(f"template {self.id} slot {i} requires a typed field")
            if kind not in allowed:
                want = "/".join(sorted(k.value for k in allowed))
                raise SlotTypeError(
                    f"template {self.id} slot {i} takes {want}, got {kind.value}"
                )

    def render(self, values: list[FieldValue] | tuple[FieldValue, ...]) -> str:
        return render_pattern(self.pattern, values)


def _parse_slot_types(raw: list[list[str]], where: str) -> tuple[frozenset[FieldKind], ...]:
    out = []
    for slot in raw:
        kinds = set()
        for name in slot:
            try:
                kinds.add(FieldKind(name))
            except ValueError as exc:
                raise PatternError(f"{where}: unknown field kind {name!r}") from exc
        out.append(frozenset(kinds))
    return tuple(out)


def builtin_templates_path() -> Path:
    return Path(__file__).parent / "data" / "templates.json"


@dataclass
class TemplateRegistry:
    """Ordered template store; ids are "t1", "t2", ... in creation order."""

    templates: dict[str, TemplateSpec] = field(default_factory=dict)

    @classmethod
    def builtin(cls) -> "TemplateRegistry":
        reg = cls()
        raw = json.loads(builtin_templates_path().read_text(encoding="utf-8"))
        for entry in raw["templates"]:
            reg.add(entry["pattern"], entry.get("slot_types"), origin="builtin")
        return reg

    @classmethod
    def empty(cls) -> "TemplateRegistry":
        return cls()

    def __len__(self) -> int:
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates.values())

    def get(self, template_id: str) -> TemplateSpec | None:
        return self.templates.get(template_id)

    def add(
        self,
        pattern: str,
        slot_types: list[list[str]] | tuple[frozenset[FieldKind], ...] | None = None,
        origin: str = "agent",
    ) -> TemplateSpec:
        """Validate and register a pattern, returning the stored spec.

        slot_types defaults to fully unconstrained slots.  Registering the
        same pattern twice creates a second template; the store never mutates
        or removes an entry once handed out, because logs refer to ids.
        """
        arity = validate_pattern(pattern)
        if slot_types is None:
            types: tuple[frozenset[FieldKind], ...] = tuple(frozenset() for _ in range(arity))
        elif slot_types and isinstance(slot_types[0], frozenset):
            types = tuple(slot_types)  # type: ignore[arg-type]
        else:
            types = _parse_slot_types(list(slot_types), where=pattern)  # type: ignore[arg-type]
        if len(types) != arity:
            raise PatternError(
                f"pattern has {arity} slots but {len(types)} slot types were given"
            )
        template_id = f"t{len(self.templates) + 1}"
        spec = TemplateSpec(id=template_id, pattern=pattern, slot_types=types, origin=origin)
        self.templates[template_id] = spec
        return spec
