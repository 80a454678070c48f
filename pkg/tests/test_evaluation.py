import json
import shlex
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from meep.errors import SchemaError, SkippedPoint
from meep.evaluation import (
    WAIT_DECISION,
    Bucket,
    CorpusStats,
    SubprocessPredictor,
    corpus_stats,
    count_turns,
    destination_accuracy,
    evaluate,
    example_to_json,
    extract_decisions,
    gold_oracle,
    learning_curve,
    levenshtein,
    query_similarity,
    score_decision,
)
from meep.session import ClickDecision, session_decisions

words = st.text(alphabet="abcdef ", max_size=12)


# -- edit distance -----------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, d",
    [
        ("", "", 0),
        ("abc", "", 3),
        ("", "abc", 3),
        ("kitten", "sitting", 3),
        ("flaw", "lawn", 2),
        ("saturday", "sunday", 3),
        ("same", "same", 0),
    ],
)
def test_levenshtein_known_values(a, b, d):
    assert levenshtein(a, b) == d


@given(words, words)
def test_levenshtein_symmetric(a, b):
    assert levenshtein(a, b) == levenshtein(b, a)


@given(words)
def test_levenshtein_identity(a):
    assert levenshtein(a, a) == 0


@given(words, words)
def test_levenshtein_bounds(a, b):
    d = levenshtein(a, b)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


@given(words, words, words)
def test_levenshtein_triangle(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_query_similarity():
    assert query_similarity("", "") == 1.0
    assert query_similarity("coffee", "coffee") == 1.0
    assert query_similarity("Coffee", "coffee") == 1.0
    assert query_similarity("Coffee", "coffee", case_fold=False) < 1.0
    # 7 edits over the longer string's 16 characters
    assert query_similarity("Starbucks Venice", "Starbucks") == pytest.approx(1 - 7 / 16)


def test_score_decision():
    gold = ClickDecision("action", "find_place")
    assert score_decision(gold, gold) == 1.0
    assert score_decision(ClickDecision("action", "t3"), gold) == 0.0
    assert score_decision(ClickDecision("query", "find_place"), gold) == 0.0
    q_gold = ClickDecision("query", "Starbucks")
    assert score_decision(ClickDecision("query", "starbucks"), q_gold) == 1.0
    partial = score_decision(ClickDecision("query", "Starbucks Venice"), q_gold)
    assert 0.0 < partial < 1.0
    p_gold = ClickDecision("parameter", "v1.name")
    assert score_decision(ClickDecision("parameter", "v1.name"), p_gold) == 1.0
    assert score_decision(ClickDecision("parameter", "v1.namex"), p_gold) == 0.0


def test_bucket_accuracy():
    b = Bucket()
    assert b.accuracy == 0.0
    b.add(1.0)
    b.add(0.5)
    assert b.n == 2
    assert b.accuracy == 0.75


# -- example extraction ------------------------------------------------------


def test_extract_matches_session_decisions(walkthrough_log):
    examples = extract_decisions(walkthrough_log)
    assert [e.gold for e in examples] == session_decisions(walkthrough_log.entries)
    assert len(examples) == 13
    assert [e.position for e in examples] == list(range(13))
    assert all(e.session_id == "walk" for e in examples)


def test_extract_pending_grows_within_action(walkthrough_log):
    examples = extract_decisions(walkthrough_log)
    # find_place: action, query, two parameters share one entry prefix
    first_four = examples[:4]
    assert [len(e.pending) for e in first_four] == [0, 1, 2, 3]
    assert len({e.entries for e in first_four}) == 1
    assert first_four[1].pending[0] == ClickDecision("action", "find_place")
    # the prefix excludes the entry being composed
    assert all(len(e.entries) == 2 for e in first_four)  # init + user turn


def test_extract_wait_examples(walkthrough_log):
    examples = extract_decisions(walkthrough_log)
    waits = [e for e in examples if e.gold == WAIT_DECISION]
    assert len(waits) == 1
    assert waits[0].position == 9


def test_gold_oracle_is_perfect(walkthrough_log):
    report = evaluate(gold_oracle, [walkthrough_log])
    assert report.overall.accuracy == 1.0
    assert report.overall.n == 13
    assert (report.action.n, report.query.n, report.parameter.n) == (5, 1, 7)
    assert report.errors == []


def test_bucket_ns_partition_overall(walkthrough_log):
    report = evaluate(gold_oracle, [walkthrough_log, walkthrough_log])
    assert report.overall.n == report.action.n + report.query.n + report.parameter.n


def test_constant_wait_identity(walkthrough_log):
    """A predictor that always waits scores exactly the wait fraction."""
    report = evaluate(lambda e: WAIT_DECISION, [walkthrough_log])
    golds = [e.gold for e in extract_decisions(walkthrough_log)]
    wait_share = sum(g == WAIT_DECISION for g in golds) / len(golds)
    assert report.overall.accuracy == pytest.approx(wait_share)
    action_golds = [g for g in golds if g.category == "action"]
    assert report.action.accuracy == pytest.approx(
        sum(g == WAIT_DECISION for g in action_golds) / len(action_golds)
    )
    assert report.query.accuracy == 0.0
    assert report.parameter.accuracy == 0.0


def test_evaluate_captures_predictor_errors(walkthrough_log):
    def flaky(example):
        if example.position == 3:
            raise RuntimeError("boom")
        return example.gold

    report = evaluate(flaky, [walkthrough_log])
    assert report.overall.n == 13
    assert report.overall.total == 12.0
    assert report.errors == ["walk#3: RuntimeError: boom"]


def test_format_table(walkthrough_log):
    table = evaluate(gold_oracle, [walkthrough_log]).format_table()
    assert table.splitlines() == [
        "bucket    accuracy      n",
        "overall     100.0%     13",
        "action      100.0%      5",
        "query       100.0%      1",
        "variable    100.0%      7",
    ]


# -- destination and corpus stats --------------------------------------------


def test_destination_accuracy(walkthrough_log):
    report = destination_accuracy(gold_oracle, [walkthrough_log])
    assert (report.correct, report.evaluated, report.skipped) == (1, 1, 0)
    assert report.accuracy == 1.0

    wrong = destination_accuracy(lambda e: WAIT_DECISION, [walkthrough_log])
    assert (wrong.correct, wrong.evaluated) == (0, 1)


def test_destination_accuracy_skips_undriven(walkthrough_log, backend):
    from meep.logfile import SessionLogFile
    from meep.session import create_session

    s = create_session(backend, address="xxx Admiralty Way, Marina del Rey")
    s.add_user_utterance("hello")
    s.close()
    undriven = SessionLogFile.from_session(s)
    report = destination_accuracy(gold_oracle, [walkthrough_log, undriven])
    assert (report.evaluated, report.skipped) == (1, 1)


def test_count_turns(walkthrough_log):
    assert count_turns(walkthrough_log.entries) == 4
    assert count_turns([]) == 0
    assert count_turns(walkthrough_log.entries[:1]) == 0  # init only


def test_corpus_stats(walkthrough_log):
    stats = corpus_stats([walkthrough_log])
    assert stats == CorpusStats(dialogs=1, decisions=13, avg_turns=4.0)
    assert stats.format_row() == "1 dialogs, 13 agent decisions, 4.0 avg turns"
    assert corpus_stats([]).avg_turns == 0.0


# -- learning curve ----------------------------------------------------------


def constant_factory(train):
    del train
    return lambda example: WAIT_DECISION


def test_learning_curve_points(walkthrough_log):
    train = [walkthrough_log] * 10
    points = learning_curve(constant_factory, train, (0.2, 0.5, 1.0), [walkthrough_log])
    assert [p.n_dialogs for p in points] == [2, 5, 10]
    assert [p.fraction for p in points] == [0.2, 0.5, 1.0]
    assert all(p.accuracy == pytest.approx(1 / 13) for p in points)


@pytest.mark.parametrize(
    "fractions",
    [(), (0.5, 0.5), (0.8, 0.2), (0.5, 1.5), (0.0, 1.0)],
)
def test_learning_curve_rejects_bad_fractions(walkthrough_log, fractions):
    with pytest.raises(SkippedPoint):
        learning_curve(constant_factory, [walkthrough_log] * 4, fractions, [walkthrough_log])


def test_learning_curve_rejects_zero_floor(walkthrough_log):
    with pytest.raises(SkippedPoint, match="zero dialogs"):
        learning_curve(constant_factory, [walkthrough_log] * 5, (0.1,), [walkthrough_log])


# -- subprocess predictors ---------------------------------------------------


def test_example_to_json(walkthrough_log):
    example = extract_decisions(walkthrough_log)[2]
    obj = example_to_json(example)
    assert set(obj) == {"session", "position", "entries", "pending"}
    assert obj["session"] == "walk"
    assert obj["position"] == 2
    assert [e["type"] for e in obj["entries"]] == ["init", "user"]
    assert obj["pending"] == [
        {"category": "action", "payload": "find_place"},
        {"category": "query", "payload": "Starbucks Venice Boulevard"},
    ]
    json.dumps(obj)  # wire-safe


CHILD_CONSTANT = (
    "import sys, json\n"
    "for line in sys.stdin:\n"
    "    json.loads(line)\n"
    "    print(json.dumps({'category': 'action', 'payload': 'wait_for_user'}), flush=True)\n"
)


def test_subprocess_predictor_matches_in_process(walkthrough_log):
    child = SubprocessPredictor([sys.executable, "-c", CHILD_CONSTANT])
    try:
        report = evaluate(child, [walkthrough_log])
    finally:
        child.close()
    local = evaluate(lambda e: WAIT_DECISION, [walkthrough_log])
    assert report.overall.accuracy == local.overall.accuracy
    assert report.errors == []


def test_subprocess_predictor_string_command(walkthrough_log):
    cmd = " ".join([shlex.quote(sys.executable), "-c", shlex.quote(CHILD_CONSTANT)])
    child = SubprocessPredictor(cmd)
    try:
        decision = child(extract_decisions(walkthrough_log)[0])
    finally:
        child.close()
    assert decision == WAIT_DECISION


@pytest.mark.parametrize(
    "reply",
    [
        "print('not json', flush=True)",
        "print('[1, 2]', flush=True)",
        "print('{\"category\": \"verb\", \"payload\": \"x\"}', flush=True)",
        "print('{\"category\": \"action\", \"payload\": 3}', flush=True)",
    ],
)
def test_subprocess_predictor_rejects_bad_answers(walkthrough_log, reply):
    script = f"import sys\nfor line in sys.stdin:\n    {reply}\n"
    child = SubprocessPredictor([sys.executable, "-c", script])
    try:
        with pytest.raises(Exception):
            child(extract_decisions(walkthrough_log)[0])
    finally:
        child.close()


def test_subprocess_predictor_dead_pipe(walkthrough_log):
    child = SubprocessPredictor([sys.executable, "-c", "pass"])
    try:
        with pytest.raises(SchemaError, match="stdout"):
            child(extract_decisions(walkthrough_log)[0])
    finally:
        child.close()


def test_subprocess_errors_recorded_not_fatal(walkthrough_log):
    child = SubprocessPredictor([sys.executable, "-c", "pass"])
    try:
        report = evaluate(child, [walkthrough_log])
    finally:
        child.close()
    assert report.overall.accuracy == 0.0
    assert len(report.errors) == 13
