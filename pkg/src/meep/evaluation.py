"""Teacher-forced, click-level evaluation of next-decision predictors.

Each agent decision in a log becomes one prediction example whose context is
the gold history (prefix entries plus the decisions already taken inside the
current action), so a predictor is always brought back on track after a miss.
Actions and parameters score exact-match; queries get partial credit via
normalized Levenshtein distance.  Bucket accuracies mirror the standard
report layout: overall, action, query, and variable (our parameter
category under its table name).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import SkippedPoint
from .logfile import SessionLogFile
from .session import (
    ACTION,
    PARAMETER,
    QUERY,
    AgentUtteranceEntry,
    ApiCallEntry,
    ClickDecision,
    LogEntry,
    StartDrivingEntry,
    UserEntry,
    decisions_for_entry,
    session_decisions,
)

WAIT_DECISION = ClickDecision(ACTION, "wait_for_user")


@dataclass(frozen=True)
class PredictionExample:
    """One next-decision example: gold history in, one decision out.

    `entries` is the log prefix before the current action; `pending` holds
    the decisions already made within that action (empty when the decision
    being predicted is the action selection itself).
    """

    entries: tuple[LogEntry, ...]
    pending: tuple[ClickDecision, ...]
    gold: ClickDecision
    session_id: str
    position: int


Predictor = Callable[[PredictionExample], ClickDecision]


def extract_decisions(log: SessionLogFile) -> list[PredictionExample]:
    """All prediction examples of a log, in decision order.

    The gold sequence equals session_decisions on the same entries,
    including the synthesized wait_for_user hand-backs.
    """
    examples: list[PredictionExample] = []
    prefix: list[LogEntry] = []
    session_id = log.meta.session_id

    def emit(decisions: list[ClickDecision]) -> None:
        pending: list[ClickDecision] = []
        for decision in decisions:
            examples.append(
                PredictionExample(
                    entries=tuple(prefix),
                    pending=tuple(pending),
                    gold=decision,
                    session_id=session_id,
                    position=len(examples),
                )
            )
            pending.append(decision)

    prev: LogEntry | None = None
    for entry in log.entries:
        if isinstance(entry, UserEntry) and isinstance(
            prev, (ApiCallEntry, AgentUtteranceEntry)
        ):
            emit([WAIT_DECISION])
        emit(decisions_for_entry(entry))
        prefix.append(entry)
        prev = entry
    if isinstance(prev, AgentUtteranceEntry):
        emit([WAIT_DECISION])
    return examples


def gold_oracle(example: PredictionExample) -> ClickDecision:
    return example.gold


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance (insert/delete/substitute, each cost 1)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


def query_similarity(predicted: str, gold: str, case_fold: bool = True) -> float:
    if case_fold:
        predicted, gold = predicted.casefold(), gold.casefold()
    longest = max(len(predicted), len(gold))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(predicted, gold) / longest


def score_decision(
    predicted: ClickDecision, gold: ClickDecision, case_fold: bool = True
) -> float:
    """Score one prediction in [0, 1]; category mismatch scores 0."""
    if predicted.category != gold.category:
        return 0.0
    if gold.category == QUERY:
        return query_similarity(predicted.payload, gold.payload, case_fold)
    return 1.0 if predicted.payload == gold.payload else 0.0


@dataclass
class Bucket:
    n: int = 0
    total: float = 0.0

    def add(self, score: float) -> None:
        self.n += 1
        self.total += score

    @property
    def accuracy(self) -> float:
        return self.total / self.n if self.n else 0.0


@dataclass
class EvalReport:
    overall: Bucket = field(default_factory=Bucket)
    action: Bucket = field(default_factory=Bucket)
    query: Bucket = field(default_factory=Bucket)
    parameter: Bucket = field(default_factory=Bucket)
    errors: list[str] = field(default_factory=list)

    def bucket(self, category: str) -> Bucket:
        return {ACTION: self.action, QUERY: self.query, PARAMETER: self.parameter}[category]

    def format_table(self) -> str:
        """Accuracy table with the conventional bucket names ("variable"
        is what the parameter category is called in reports)."""
        rows = [
            ("overall", self.overall),
            ("action", self.action),
            ("query", self.query),
            ("variable", self.parameter),
        ]
        lines = ["bucket    accuracy      n"]
        for name, bucket in rows:
            lines.append(f"{name:<9} {100 * bucket.accuracy:7.1f}%  {bucket.n:5d}")
        return "\n".join(lines)


def evaluate(
    predictor: Predictor,
    logs: Sequence[SessionLogFile],
    case_fold: bool = True,
) -> EvalReport:
    """Teacher-forced evaluation over every decision of every log.

    A predictor exception scores that example 0.0 and is recorded in the
    report's errors rather than aborting the run.
    """
    report = EvalReport()
    for log in logs:
        for example in extract_decisions(log):
            try:
                predicted = predictor(example)
                score = score_decision(predicted, example.gold, case_fold)
            except Exception as exc:  # noqa: BLE001 - predictor quality is data here
                score = 0.0
                report.errors.append(
                    f"{example.session_id}#{example.position}: {type(exc).__name__}: {exc}"
                )
            report.overall.add(score)
            report.bucket(example.gold.category).add(score)
    return report


@dataclass
class DestinationReport:
    correct: int
    evaluated: int
    skipped: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.evaluated if self.evaluated else 0.0


def destination_accuracy(
    predictor: Predictor, logs: Sequence[SessionLogFile]
) -> DestinationReport:
    """Fraction of logs whose two start_driving parameters are both
    predicted exactly.  Logs that never start driving are skipped."""
    correct = evaluated = skipped = 0
    for log in logs:
        if not any(isinstance(e, StartDrivingEntry) for e in log.entries):
            skipped += 1
            continue
        examples = extract_decisions(log)
        start = next(
            i
            for i, ex in enumerate(examples)
            if ex.gold == ClickDecision(ACTION, "start_driving")
        )
        params = examples[start + 1 : start + 3]
        evaluated += 1
        ok = True
        for example in params:
            try:
                predicted = predictor(example)
            except Exception:  # noqa: BLE001
                ok = False
                break
            if predicted != example.gold:
                ok = False
                break
        correct += ok
    return DestinationReport(correct=correct, evaluated=evaluated, skipped=skipped)


@dataclass
class CorpusStats:
    dialogs: int
    decisions: int
    avg_turns: float

    def format_row(self) -> str:
        return f"{self.dialogs} dialogs, {self.decisions} agent decisions, {self.avg_turns:.1f} avg turns"


def count_turns(entries: Sequence[LogEntry]) -> int:
    """Maximal same-speaker blocks; waits and bookkeeping entries neither
    form nor break a block."""
    turns = 0
    current: str | None = None
    for entry in entries:
        if isinstance(entry, UserEntry):
            speaker = "user"
        elif isinstance(entry, (ApiCallEntry, AgentUtteranceEntry, StartDrivingEntry)):
            speaker = "agent"
        else:
            continue
        if speaker != current:
            turns += 1
            current = speaker
    return turns


def corpus_stats(logs: Sequence[SessionLogFile]) -> CorpusStats:
    dialogs = len(logs)
    decisions = sum(len(session_decisions(log.entries)) for log in logs)
    total_turns = sum(count_turns(log.entries) for log in logs)
    return CorpusStats(
        dialogs=dialogs,
        decisions=decisions,
        avg_turns=total_turns / dialogs if dialogs else 0.0,
    )


@dataclass(frozen=True)
class CurvePoint:
    fraction: float
    n_dialogs: int
    accuracy: float


def learning_curve(
    predictor_factory: Callable[[list[SessionLogFile]], Predictor],
    train_logs: Sequence[SessionLogFile],
    fractions: Sequence[float],
    dev_logs: Sequence[SessionLogFile],
    seed: int = 0,
    case_fold: bool = True,
) -> list[CurvePoint]:
    """Accuracy vs training-set size, on nested subsets of one shuffle.

    Subsets are cumulative prefixes of a single seeded permutation, so the
    curve reflects data availability rather than resampling noise.  A
    fraction that floors to zero dialogs raises SkippedPoint.
    """
    if not fractions:
        raise SkippedPoint("no fractions given")
    last = 0.0
    for fraction in fractions:
        if not last < fraction <= 1.0:
            raise SkippedPoint(f"fractions must ascend within (0, 1]: {fraction}")
        last = fraction
    order = list(range(len(train_logs)))
    random.Random(seed).shuffle(order)
    points = []
    for fraction in fractions:
        k = math.floor(fraction * len(train_logs))
        if k == 0:
            raise SkippedPoint(f"fraction {fraction} yields zero dialogs")
        subset = [train_logs[i] for i in order[:k]]
        predictor = predictor_factory(subset)
        report = evaluate(predictor, dev_logs, case_fold)
        points.append(CurvePoint(fraction=fraction, n_dialogs=k, accuracy=report.overall.accuracy))
    return points


# ---------------------------------------------------------------------------
# External predictors: one process, line-delimited records on its pipes.


def example_to_json(example: PredictionExample) -> dict:
    from .logfile import entry_to_json

    return {
        "session": example.session_id,
        "position": example.position,
        "entries": [entry_to_json(e) for e in example.entries],
        "pending": [
            {"category": d.category, "payload": d.payload} for d in example.pending
        ],
    }


class SubprocessPredictor:
    """Predictor backed by a child process.

    The child reads one JSON example per line on stdin and must answer one
    JSON decision per line on stdout: {"category": ..., "payload": ...}.
    A dead pipe or a malformed answer raises, which the harness records as
    a zero-scored example.
    """

    def __init__(self, cmd: str | Sequence[str]):
        import shlex
        import subprocess

        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def __call__(self, example: PredictionExample) -> ClickDecision:
        import json

        from .errors import SchemaError

        assert self.proc.stdin is not None and self.proc.stdout is not None
        self.proc.stdin.write(json.dumps(example_to_json(example), ensure_ascii=False) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise SchemaError("predictor process closed its stdout")
        answer = json.loads(line)
        if not isinstance(answer, dict):
            raise SchemaError("predictor answer must be an object")
        category = answer.get("category")
        payload = answer.get("payload")
        if category not in (ACTION, QUERY, PARAMETER) or not isinstance(payload, str):
            raise SchemaError(f"bad predictor answer: {answer!r}")
        return ClickDecision(category, payload)

    def close(self) -> None:
        if self.proc.stdin is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass  # child already gone; the close flush has nowhere to go
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()
