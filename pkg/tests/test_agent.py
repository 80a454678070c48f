import pytest

from meep.agent import (
    APPROVAL_UTTERANCE,
    AgentState,
    CaseResult,
    RuleConfig,
    SuiteReport,
    action_decisions,
    classify_turn,
    drive_agent,
    load_cases,
    load_rules,
    next_action,
    run_scripted_dialog,
    run_suite,
    update_query,
)
from meep.errors import SchemaError
from meep.logfile import serialize, serialize_session, validate, replay
from meep.places import FieldKind
from meep.session import (
    CallApi,
    ClickDecision,
    Literal,
    SayTemplate,
    StartDriving,
    TokenSpan,
    Token,
    VarField,
    Variable,
    WaitForUser,
    create_session,
)

SOURCE_ADDRESS = "xxx Admiralty Way, Marina del Rey"


# -- rule configuration ------------------------------------------------------


def test_bundled_rules(rules):
    assert rules.turn_budget == 12
    assert rules.approval_radius_m == 150.0
    assert "find" in rules.stopwords
    assert "yes" in rules.affirmations
    assert "near" in rules.landmark_markers
    assert rules.attribute_keywords == rules.attribute_rating | rules.attribute_open


def test_keyword_sets_must_not_overlap(rules):
    with pytest.raises(SchemaError, match="overlap"):
        RuleConfig(
            stopwords=rules.stopwords,
            affirmations=rules.affirmations | {"no"},
            negations=rules.negations,
            attribute_rating=rules.attribute_rating,
            attribute_open=rules.attribute_open,
            landmark_markers=rules.landmark_markers,
        )


def test_rules_file_type_check(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text('{"stopwords": "not-a-list"}', encoding="utf-8")
    with pytest.raises(SchemaError):
        load_rules(path)


# -- query building ----------------------------------------------------------


def test_update_query_strips_noise(rules):
    tokens = ["I", "want", "to", "go", "to", "Starbucks", "on", "Venice", "Boulevard"]
    assert update_query("", tokens, rules) == "Starbucks Venice Boulevard"


def test_update_query_merges_and_dedups(rules):
    q = update_query("", ["sushi"], rules)
    q = update_query(q, ["a", "Sushi", "spot", "downtown"], rules)
    assert q == "sushi spot downtown"  # first spelling wins


def test_update_query_ignores_pure_noise(rules):
    assert update_query("coffee", ["please", "!", "?"], rules) == "coffee"


# -- turn classification -----------------------------------------------------


def offered_state():
    dest = Variable(
        "v1",
        {
            FieldKind.NAME: "Starbucks",
            FieldKind.LATITUDE: 34.0112,
            FieldKind.LONGITUDE: -118.4026131,
            FieldKind.PLACE_ID: "x",
            FieldKind.ADDRESS: "somewhere",
        },
    )
    return AgentState(query="Starbucks", destination=dest, phase="offered")


def test_classify_search(rules):
    reading = classify_turn(AgentState(), ["I", "want", "coffee"], rules)
    assert reading.case == "search"
    assert reading.new_query == "coffee"


def test_classify_fallback_without_content(rules):
    assert classify_turn(AgentState(), ["hello", "!"], rules).case == "fallback"


def test_classify_fallback_on_repeat(rules):
    state = AgentState(query="coffee")
    assert classify_turn(state, ["coffee", "please"], rules).case == "fallback"


def test_classify_affirm_needs_offer(rules):
    assert classify_turn(offered_state(), ["Yes"], rules).case == "affirm"
    assert classify_turn(AgentState(), ["Yes"], rules).case == "fallback"


def test_classify_negate(rules):
    reading = classify_turn(offered_state(), ["No", "sushi", "instead"], rules)
    assert reading.case == "negate"
    assert reading.new_query == "Starbucks sushi"


def test_negate_wins_over_affirmation_words(rules):
    reading = classify_turn(offered_state(), ["no", "that's", "fine"], rules)
    assert reading.case == "negate"


def test_classify_attribute(rules):
    assert classify_turn(offered_state(), ["is", "it", "open", "?"], rules).attribute == "open"
    reading = classify_turn(offered_state(), ["what's", "the", "rating", "?"], rules)
    assert reading.case == "attribute"
    assert reading.attribute == "rating"
    # attribute words only matter while an offer stands
    assert classify_turn(AgentState(), ["is", "it", "open"], rules).case == "fallback"


def test_classify_landmark(rules):
    reading = classify_turn(
        offered_state(), ["is", "it", "near", "the", "Coffee", "Connection", "?"], rules
    )
    assert reading.case == "landmark"
    assert reading.landmark_query == "Coffee Connection"


def test_landmark_without_description_falls_back(rules):
    assert classify_turn(offered_state(), ["is", "it", "near", "?"], rules).case == "fallback"


# -- next_action walkthroughs ------------------------------------------------


def play_turn(session, rules, text):
    session.add_user_utterance(text)
    actions = []
    while True:
        action = next_action(session.entries, rules)
        actions.append(action)
        session.apply(action)
        if isinstance(action, (WaitForUser, StartDriving)):
            return actions


def test_empty_log_waits(rules):
    assert next_action([], rules) == WaitForUser()


def test_full_offer_turn(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    actions = play_turn(s, rules, "I want to go to Starbucks on Venice Boulevard")
    assert isinstance(actions[0], CallApi)
    assert actions[0].api == "find_place"
    assert actions[0].args[0] == Literal("Starbucks Venice Boulevard")
    assert isinstance(actions[1], SayTemplate) and actions[1].template_id == "t6"
    assert actions[2] == WaitForUser()
    assert "Starbucks" in s.last_turn_text()
    assert "Venice Boulevard" in s.last_turn_text()


def test_plain_offer_gets_confirmation_question(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    actions = play_turn(s, rules, "drive to Big Bear Lake")
    templates = [a.template_id for a in actions if isinstance(a, SayTemplate)]
    assert templates == ["t1", "t2"]
    assert actions[-1] == WaitForUser()


def test_no_result_apologizes(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    actions = play_turn(s, rules, "find zzyzx quux")
    assert isinstance(actions[1], SayTemplate) and actions[1].template_id == "t7"
    assert actions[-1] == WaitForUser()


def test_pure_smalltalk_apologizes(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    actions = play_turn(s, rules, "hello there")
    assert [a.template_id for a in actions if isinstance(a, SayTemplate)] == ["t7"]


def test_affirm_closes_and_drives(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "I want to go to Starbucks on Venice Boulevard")
    s.add_user_utterance(APPROVAL_UTTERANCE)
    closing = next_action(s.entries, rules)
    assert isinstance(closing, SayTemplate) and closing.template_id == "t9"
    s.apply(closing)
    start = next_action(s.entries, rules)
    assert isinstance(start, StartDriving)
    s.apply(start)
    assert s.driving


def test_attribute_open_turn(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "I want to go to Starbucks on Venice Boulevard")
    actions = play_turn(s, rules, "is it open?")
    assert isinstance(actions[0], CallApi) and actions[0].api == "get_place_attributes"
    assert isinstance(actions[1], SayTemplate) and actions[1].template_id == "t12"
    assert s.last_turn_text() == "It is currently open."


def test_attribute_unknown_shrugs(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "drive to the Marina del Rey Harbor")
    actions = play_turn(s, rules, "what is the rating?")
    assert isinstance(actions[1], SayTemplate) and actions[1].template_id == "t13"


def test_landmark_turn(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "I want to go to Starbucks on Venice Boulevard")
    actions = play_turn(s, rules, "is it close to the Coffee Connection?")
    apis = [a.api for a in actions if isinstance(a, CallApi)]
    assert apis == ["find_place", "distance_matrix"]
    say = [a for a in actions if isinstance(a, SayTemplate)]
    assert say and say[0].template_id == "t10"
    assert s.last_turn_text() == "Starbucks is 141.1 feet away from Coffee Connection."


def test_negate_refines_search(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "Take me to Starbucks")
    actions = play_turn(s, rules, "No, I was thinking the one in Culver City")
    assert isinstance(actions[0], CallApi)
    assert actions[0].args[0] == Literal("Starbucks Culver City")
    offered = [a for a in actions if isinstance(a, SayTemplate)]
    assert offered and offered[0].template_id == "t6"


def test_bare_rejection_apologizes(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    play_turn(s, rules, "Take me to Starbucks")
    actions = play_turn(s, rules, "no")
    assert [a.template_id for a in actions if isinstance(a, SayTemplate)] == ["t7"]


def test_drive_agent_yields(backend, rules):
    s = create_session(backend, address=SOURCE_ADDRESS)
    s.add_user_utterance("I want coffee")
    drive_agent(s, rules)
    from meep.session import WaitEntry

    assert isinstance(s.entries[-1], WaitEntry)


# -- decision decomposition --------------------------------------------------


def test_action_decisions_shapes():
    call = CallApi(
        "find_place",
        (Literal("coffee"), VarField("source", FieldKind.LATITUDE), VarField("source", FieldKind.LONGITUDE)),
    )
    assert action_decisions(call) == [
        ClickDecision("action", "find_place"),
        ClickDecision("query", "coffee"),
        ClickDecision("parameter", "source.latitude"),
        ClickDecision("parameter", "source.longitude"),
    ]
    span = TokenSpan((Token(1, 0, "coffee"),))
    assert action_decisions(CallApi("find_place", (span,)))[1] == ClickDecision("query", "coffee")
    say = SayTemplate("t9", (VarField("v1", FieldKind.NAME),))
    assert action_decisions(say) == [
        ClickDecision("action", "t9"),
        ClickDecision("parameter", "v1.name"),
    ]
    start = StartDriving(VarField("v1", FieldKind.LATITUDE), VarField("v1", FieldKind.LONGITUDE))
    assert [d.payload for d in action_decisions(start)] == [
        "start_driving", "v1.latitude", "v1.longitude",
    ]
    assert action_decisions(WaitForUser()) == [ClickDecision("action", "wait_for_user")]


# -- scripted dialogs --------------------------------------------------------


def test_bundled_cases_load(cases):
    assert len(cases) == 47
    assert cases[0].first_utterance == "I want to go to Starbucks on Venice Boulevard"
    assert cases[0].followups == ()
    assert all(c.source_address for c in cases)


def test_cases_reject_bad_json(tmp_path):
    path = tmp_path / "cases.jsonl"
    path.write_text('{"source_address": "x"}\n', encoding="utf-8")
    with pytest.raises(SchemaError, match="missing keys"):
        load_cases(path)


def test_scripted_dialog_direct_case(backend, rules, cases):
    log = run_scripted_dialog(cases[0], backend, rules, session_id="t-0", timestamp="t")
    text = serialize(log)
    assert serialize(validate(text)) == text  # well-formed by construction
    assert log.entries[-1].value == "approve"
    assert serialize_session(replay(validate(text), backend)) == text


def test_scripted_dialog_negation_case(backend, rules, cases):
    log = run_scripted_dialog(cases[1], backend, rules)
    assert log.entries[-1].value == "approve"
    texts = [e.text for e in log.entries if hasattr(e, "template_id")]
    assert any("Culver City" in t for t in texts)


def test_suite_prefix(backend, rules, cases):
    report = run_suite(cases[:3], backend, rules)
    assert report.completion_rate == 1.0
    assert len(report.results) == 3
    assert all(r.outcome == "approve" for r in report.results)
    assert report.results[0].turns >= 1


def test_report_formatting():
    rows = [
        CaseResult(0, "", "approve", 4, None),
        CaseResult(1, "", "approve", 6, None),
        CaseResult(2, "", "disapprove", 12, None),
    ]
    report = SuiteReport(results=rows)
    assert report.format_row() == (
        "completion 66.7%  avg turns (success) 5.0  avg turns (fail) 12.0  n=3"
    )


def test_empty_report():
    report = SuiteReport()
    assert report.completion_rate == 0.0
    assert report.format_row() == (
        "completion 0.0%  avg turns (success) 0.0  avg turns (fail) 0.0  n=0"
    )
