"""Seeded synthetic dialog corpora.

Dialogs are produced by playing the scripted user against the rule agent on
the fixture backend, so every log in a corpus is a genuine session transcript
rather than a hand-assembled record. Generation is a pure function of
(dataset, rules, config): the same seed always yields byte-identical logs,
provided the backend clock is pinned.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .agent import CaseSpec, RuleConfig, load_rules, run_scripted_dialog, state_from_entries
from .logfile import SessionLogFile, load, save
from .places import FixtureBackend, Place, PlacesDataset, load_bundled_dataset

# open_now depends on the wall clock, so reproducible corpora need a pinned one
CORPUS_CLOCK = datetime(2026, 8, 22, 14, 30)


def corpus_backend(dataset: PlacesDataset | None = None) -> FixtureBackend:
    """Fixture backend with the clock pinned to CORPUS_CLOCK."""
    return FixtureBackend(dataset or load_bundled_dataset(), clock=lambda: CORPUS_CLOCK)

DIRECT_OPENERS = (
    "Take me to {}",
    "I want to go to {}",
    "Can you take me to {}",
)
CATEGORY_OPENERS = (
    "I want {}",
    "I need {}",
    "I want to find a {}",
)
STREET_REFINE = "The one on {}"
AREA_REFINE = "The one in {}"
NEGATE_AREA = "No, I was thinking the one in {}"
ATTRIBUTE_FOLLOWUPS = ("Is it open?", "What is the rating?")
LANDMARK_FOLLOWUP = "Is it near {}?"

SHAPES = (
    ("direct", 28),
    ("category", 18),
    ("refine", 14),
    ("negate", 10),
    ("attribute", 10),
    ("landmark", 10),
    ("multi", 5),
    ("miss", 5),
)


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 7
    n_dialogs: int = 120
    timestamp: str = "2026-08-22T10:00:00"


def _weighted_choice(rng: random.Random, table) -> str:
    total = sum(w for _, w in table)
    roll = rng.random() * total
    for name, weight in table:
        roll -= weight
        if roll < 0:
            return name
    return table[-1][0]


def _area(place: Place) -> str | None:
    return place.neighborhood or place.locality


class CaseSampler:
    """Draws case shapes from a dataset with a private RNG."""

    def __init__(self, backend: FixtureBackend, rules: RuleConfig, rng: random.Random):
        self.backend = backend
        self.rules = rules
        self.rng = rng
        places = backend.dataset.places
        self.places = list(places)
        self.categorized: dict[str, list[Place]] = {}
        for p in places:
            for cat in p.categories:
                self.categorized.setdefault(cat, []).append(p)
        # sources need a resolvable street address that create_session accepts
        self.sources = [p for p in places if p.street_name and p.locality]

    def _source(self) -> Place:
        return self.rng.choice(self.sources)

    def _target_pool(self, source: Place) -> list[Place]:
        return [p for p in self.places if p.address != source.address]

    def _category(self) -> str:
        return self.rng.choice(sorted(self.categorized))

    def draw(self) -> CaseSpec | None:
        shape = _weighted_choice(self.rng, SHAPES)
        source = self._source()
        pool = self._target_pool(source)
        rng = self.rng
        if shape == "direct":
            p = rng.choice(pool)
            return self._spec(source, rng.choice(DIRECT_OPENERS).format(p.name), (), shape)
        if shape == "category":
            return self._spec(source, rng.choice(CATEGORY_OPENERS).format(self._category()), (), shape)
        if shape == "refine":
            p = rng.choice([q for q in pool if q.street_name and _area(q)])
            first = rng.choice(CATEGORY_OPENERS).format(rng.choice(sorted(p.categories)) if p.categories else p.name)
            refine = STREET_REFINE.format(p.street_name) if rng.random() < 0.5 else AREA_REFINE.format(_area(p))
            return self._spec(source, first, (refine,), shape)
        if shape == "negate":
            cat = self._category()
            areas = sorted({_area(p) for p in self.categorized[cat] if _area(p)})
            if len(areas) < 2:
                return self.draw()
            first = rng.choice(CATEGORY_OPENERS).format(cat)
            return self._spec(source, first, (NEGATE_AREA.format(rng.choice(areas)),), shape)
        if shape == "attribute":
            p = rng.choice(pool)
            first = rng.choice(DIRECT_OPENERS).format(p.name)
            return self._spec(source, first, (rng.choice(ATTRIBUTE_FOLLOWUPS),), shape)
        if shape == "landmark":
            p = rng.choice(pool)
            lm = rng.choice([q for q in pool if q.name != p.name])
            first = rng.choice(DIRECT_OPENERS).format(p.name)
            return self._spec(source, first, (LANDMARK_FOLLOWUP.format(lm.name),), shape)
        if shape == "multi":
            p = rng.choice([q for q in pool if q.street_name and q.categories])
            first = rng.choice(CATEGORY_OPENERS).format(rng.choice(sorted(p.categories)))
            follows = (STREET_REFINE.format(p.street_name), rng.choice(ATTRIBUTE_FOLLOWUPS))
            return self._spec(source, first, follows, shape)
        # miss: the user wants a place the dialog never offers, so they give up
        p = rng.choice(pool)
        first = rng.choice(CATEGORY_OPENERS).format(self._category())
        return CaseSpec(source.address, first, (), p.latitude, p.longitude, "miss")

    def _spec(self, source: Place, first: str, followups: tuple[str, ...], shape: str) -> CaseSpec | None:
        """Fix the case target to whatever the dialog actually offers last.

        A provisional run with an unreachable target plays the whole script
        without approving; the final standing offer is then the honest answer
        to "where was this conversation heading". Cases that never produce an
        offer, or whose offer is the source itself, are discarded by the
        caller (signalled with None).
        """
        probe = CaseSpec(source.address, first, followups, 0.0, 0.0, shape)
        log = run_scripted_dialog(probe, self.backend, self.rules, session_id="probe")
        state = state_from_entries(log.entries, self.rules)
        dest = state.destination
        if dest is None:
            return None
        lat = dest.fields.get("latitude")
        lng = dest.fields.get("longitude")
        if lat is None or lng is None:
            return None
        if (lat, lng) == (source.latitude, source.longitude):
            return None
        return CaseSpec(source.address, first, followups, lat, lng, shape)

    def sample(self, n: int) -> list[CaseSpec]:
        cases: list[CaseSpec] = []
        attempts = 0
        while len(cases) < n:
            attempts += 1
            if attempts > n * 40:
                raise RuntimeError("case sampling is not converging; dataset too small?")
            case = self.draw()
            if case is not None:
                cases.append(case)
        return cases


def generate_corpus(
    backend: FixtureBackend,
    config: CorpusConfig | None = None,
    rules: RuleConfig | None = None,
) -> list[SessionLogFile]:
    cfg = config or CorpusConfig()
    rules = rules or load_rules()
    rng = random.Random(cfg.seed)
    sampler = CaseSampler(backend, rules, rng)
    cases = sampler.sample(cfg.n_dialogs)
    logs = []
    for i, case in enumerate(cases):
        logs.append(
            run_scripted_dialog(
                case,
                backend,
                rules,
                session_id=f"syn-{cfg.seed}-{i:03d}",
                timestamp=cfg.timestamp,
            )
        )
    return logs


def write_corpus(logs: list[SessionLogFile], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for log in logs:
        path = out / f"{log.meta.session_id}.log"
        save(log, path)
        paths.append(path)
    return paths


def read_corpus(dir_path: str | Path) -> list[SessionLogFile]:
    return [load(p) for p in sorted(Path(dir_path).glob("*.log"))]


def split_corpus(
    logs: list[SessionLogFile],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, list[SessionLogFile]]:
    """Shuffle once and cut into train/dev/test; remainders land in train."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    shuffled = list(logs)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_dev = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_dev - n_test
    return {
        "train": shuffled[:n_train],
        "dev": shuffled[n_train:n_train + n_dev],
        "test": shuffled[n_train + n_dev:],
    }


def write_splits(splits: dict[str, list[SessionLogFile]], root: str | Path) -> None:
    for name, logs in splits.items():
        write_corpus(logs, Path(root) / name)
