import pytest
from hypothesis import given
from hypothesis import strategies as st

from meep.errors import (
    ArityError,
    CreateFailed,
    DanglingReference,
    EmptyQuery,
    EmptyUtterance,
    SchemaError,
    SessionClosed,
    SlotTypeError,
)
from meep.places import FieldKind
from meep.session import (
    CallApi,
    ClickDecision,
    Literal,
    SayTemplate,
    SessionConfig,
    StartDriving,
    Token,
    TokenSpan,
    VarField,
    WaitForUser,
    create_session,
    detokenize,
    parse_token_id,
    session_decisions,
    tokenize_utterance,
)

SOURCE_ADDRESS = "xxx Admiralty Way, Marina del Rey"


def span(session, utterance, *indices):
    return TokenSpan(tuple(session.token_at(utterance, i) for i in indices))


def field(var, kind):
    return VarField(var, FieldKind(kind))


# -- tokenization ------------------------------------------------------------


def test_tokenize_walkthrough_turn():
    tokens = tokenize_utterance("I want to go to Starbucks on Venice Boulevard", 1)
    assert [t.text for t in tokens] == [
        "I", "want", "to", "go", "to", "Starbucks", "on", "Venice", "Boulevard",
    ]
    assert tokens[5].id == "u1_5"
    assert tokens[8].id == "u1_8"


def test_tokenize_detaches_trailing_punctuation():
    texts = [t.text for t in tokenize_utterance("Is the Coffee Connection open?", 1)]
    assert texts == ["Is", "the", "Coffee", "Connection", "open", "?"]


def test_tokenize_detaches_stacked_punctuation():
    texts = [t.text for t in tokenize_utterance("Really?!", 2)]
    assert texts == ["Really", "?", "!"]


def test_tokenize_keeps_interior_punctuation():
    texts = [t.text for t in tokenize_utterance("it's 5.5 miles, right", 1)]
    assert texts == ["it's", "5.5", "miles", ",", "right"]


def test_tokenize_punctuation_only_words():
    assert [t.text for t in tokenize_utterance("!?", 1)] == ["!", "?"]


@pytest.mark.parametrize("blank", ["", "   ", "\t\n"])
def test_tokenize_rejects_blank(blank):
    with pytest.raises(EmptyUtterance):
        tokenize_utterance(blank, 1)


def test_parse_token_id():
    assert parse_token_id("u1_5") == (1, 5)
    assert parse_token_id("u12_0") == (12, 0)


@pytest.mark.parametrize("bad", ["u1", "1_5", "u1_", "ua_b", "u1_5x", "v1.name", ""])
def test_parse_token_id_rejects(bad):
    with pytest.raises(SchemaError):
        parse_token_id(bad)


def test_detokenize_reattaches_punctuation():
    assert detokenize(["Hello", ",", "world", "!"]) == "Hello, world!"


@given(
    st.lists(
        st.text(alphabet="abcdef", min_size=1, max_size=6), min_size=1, max_size=10
    ),
    st.sampled_from(["", "?", "!", ".", ","]),
)
def test_detokenize_inverts_tokenize(words, tail):
    text = " ".join(words) + tail
    tokens = tokenize_utterance(text, 1)
    assert detokenize([t.text for t in tokens]) == text


# -- session creation --------------------------------------------------------


def test_create_by_address(backend):
    s = create_session(backend, address=SOURCE_ADDRESS)
    src = s.source
    assert src.id == "source"
    assert src.value(FieldKind.ADDRESS) == SOURCE_ADDRESS
    assert src.value(FieldKind.LATITUDE) == pytest.approx(33.9816425)
    assert src.value(FieldKind.LONGITUDE) == pytest.approx(-118.4409761)
    assert s.meta.backend_id == backend.backend_id
    assert s.meta.dataset_version == backend.dataset_version
    assert len(s.entries) == 1  # just the init record


def test_create_by_coords_reverse_labels(backend):
    s = create_session(backend, latitude=33.9816425, longitude=-118.4409761)
    assert s.source.value(FieldKind.ADDRESS) == SOURCE_ADDRESS


def test_create_with_both_skips_lookup(backend):
    s = create_session(backend, address="home base", latitude=33.98, longitude=-118.44)
    assert s.source.value(FieldKind.ADDRESS) == "home base"


def test_create_failures(backend):
    with pytest.raises(CreateFailed):
        create_session(backend)
    with pytest.raises(CreateFailed):
        create_session(backend, latitude=91.0, longitude=0.0)
    with pytest.raises(CreateFailed):
        create_session(backend, latitude=0.0, longitude=-190.0)
    with pytest.raises(CreateFailed):
        create_session(backend, address="zzyzx quux nowhere")


def test_create_honours_explicit_meta(backend):
    s = create_session(
        backend, address=SOURCE_ADDRESS, session_id="abc", timestamp="2026-08-22T10:00:00"
    )
    assert s.meta.session_id == "abc"
    assert s.meta.timestamp == "2026-08-22T10:00:00"


def test_variable_missing_field(backend):
    s = create_session(backend, address=SOURCE_ADDRESS)
    with pytest.raises(DanglingReference):
        s.source.value(FieldKind.RATING)


# -- token lookup ------------------------------------------------------------


def test_token_at(backend):
    s = create_session(backend, address=SOURCE_ADDRESS)
    s.add_user_utterance("find me coffee")
    assert s.token_at(1, 2).text == "coffee"
    with pytest.raises(DanglingReference):
        s.token_at(2, 0)
    with pytest.raises(DanglingReference):
        s.token_at(1, 3)
    with pytest.raises(DanglingReference):
        s.token_at(0, 0)


# -- api calls ---------------------------------------------------------------


@pytest.fixture
def walkthrough_session(backend):
    s = create_session(backend, address=SOURCE_ADDRESS, session_id="walk")
    s.add_user_utterance("I want to go to Starbucks on Venice Boulevard")
    return s


def find_place_action(s):
    return CallApi(
        "find_place",
        (
            span(s, 1, 5, 7, 8),
            field("source", "latitude"),
            field("source", "longitude"),
        ),
    )


def test_find_place_stores_variable(walkthrough_session):
    s = walkthrough_session
    entry = s.apply(find_place_action(s))
    assert entry.error is None
    assert entry.var_ids == ("v1",)
    v1 = s.variables["v1"]
    assert v1.value(FieldKind.NAME) == "Starbucks"
    assert v1.value(FieldKind.STREET_NAME) == "Venice Boulevard"
    assert v1.value(FieldKind.DURATION) == "10 mins"
    assert isinstance(v1.value(FieldKind.LATITUDE), float)


def test_var_ids_are_sequential(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    s.apply(
        CallApi(
            "places_nearby",
            (Literal("coffee"), field("v1", "latitude"), field("v1", "longitude")),
        )
    )
    assert [v for v in s.variables if v != "source"] == ["v1", "v2", "v3", "v4"]


def test_failed_call_skips_numbering(walkthrough_session):
    s = walkthrough_session
    bad = CallApi(
        "find_place",
        (Literal("zzyzx quux"), field("source", "latitude"), field("source", "longitude")),
    )
    entry = s.apply(bad)
    assert entry.error == "not_found"
    assert entry.var_ids == ()
    assert entry.results == ()
    ok = s.apply(find_place_action(s))
    assert ok.var_ids == ("v1",)


def test_query_accepts_literal(walkthrough_session):
    s = walkthrough_session
    entry = s.apply(
        CallApi(
            "find_place",
            (Literal("Starbucks Venice Boulevard"),
             field("source", "latitude"),
             field("source", "longitude")),
        )
    )
    assert entry.var_ids == ("v1",)


def test_query_span_order_is_click_order(walkthrough_session):
    s = walkthrough_session
    assert span(s, 1, 7, 5).text == "Venice Starbucks"


def test_unknown_api(walkthrough_session):
    with pytest.raises(SchemaError):
        walkthrough_session.apply(CallApi("teleport", ()))


def test_call_arity(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(ArityError):
        s.apply(CallApi("find_place", (span(s, 1, 5),)))


def test_query_slot_rejects_field(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(SlotTypeError):
        s.apply(
            CallApi(
                "find_place",
                (field("source", "address"),
                 field("source", "latitude"),
                 field("source", "longitude")),
            )
        )


def test_param_slot_rejects_span(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(SlotTypeError):
        s.apply(
            CallApi(
                "find_place",
                (span(s, 1, 5), span(s, 1, 7), field("source", "longitude")),
            )
        )


def test_param_slot_checks_kind(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(SlotTypeError):
        s.apply(
            CallApi(
                "find_place",
                (span(s, 1, 5), field("source", "longitude"), field("source", "latitude")),
            )
        )


def test_empty_queries(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(EmptyQuery):
        s.apply(
            CallApi(
                "find_place",
                (TokenSpan(()), field("source", "latitude"), field("source", "longitude")),
            )
        )
    with pytest.raises(EmptyQuery):
        s.apply(
            CallApi(
                "find_place",
                (Literal("   "), field("source", "latitude"), field("source", "longitude")),
            )
        )


def test_span_text_must_match_recorded(walkthrough_session):
    s = walkthrough_session
    forged = TokenSpan((Token(1, 5, "Peets"),))
    with pytest.raises(DanglingReference):
        s.apply(
            CallApi(
                "find_place",
                (forged, field("source", "latitude"), field("source", "longitude")),
            )
        )


def test_unknown_var_reference(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(DanglingReference):
        s.apply(
            CallApi(
                "find_place",
                (span(s, 1, 5), field("v9", "latitude"), field("v9", "longitude")),
            )
        )


def test_failed_apply_leaves_no_trace(walkthrough_session):
    s = walkthrough_session
    before = list(s.entries)
    with pytest.raises(ArityError):
        s.apply(CallApi("find_place", (span(s, 1, 5),)))
    assert s.entries == before


def test_distance_matrix_uses_addresses(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    entry = s.apply(
        CallApi(
            "distance_matrix",
            (field("source", "address"), field("v1", "address")),
        )
    )
    assert entry.results[0] == {
        FieldKind.DISTANCE: "3.0 mi",
        FieldKind.DURATION: "10 mins",
    }


# -- template utterances -----------------------------------------------------


def test_say_template_renders(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    entry = s.apply(
        SayTemplate(
            "t3",
            (field("v1", "name"), field("v1", "street_name"), field("v1", "duration")),
        )
    )
    assert entry.text == "Starbucks on Venice Boulevard is 10 minutes away."
    assert entry.pattern == "{} on {} is {} minutes away."
    assert s.transcript[-1] == ("agent", entry.text)


def test_say_unknown_template(walkthrough_session):
    with pytest.raises(DanglingReference):
        walkthrough_session.apply(SayTemplate("t99", ()))


def test_say_arity(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    with pytest.raises(ArityError):
        s.apply(SayTemplate("t4", (field("v1", "name"),)))


def test_say_slot_kind_checked(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    with pytest.raises(SlotTypeError):
        s.apply(
            SayTemplate(
                "t3",
                (field("v1", "address"), field("v1", "street_name"), field("v1", "duration")),
            )
        )


def test_say_rejects_free_text(walkthrough_session):
    with pytest.raises(SlotTypeError):
        walkthrough_session.apply(
            SayTemplate("t11", (Literal("five stars"),))
        )


def test_token_fillers_off_by_default(walkthrough_session):
    s = walkthrough_session
    with pytest.raises(SlotTypeError):
        s.apply(SayTemplate("t11", (span(s, 1, 5),)))


def test_token_fillers_opt_in(backend):
    s = create_session(
        backend, address=SOURCE_ADDRESS, config=SessionConfig(allow_token_fillers=True)
    )
    s.add_user_utterance("call it HQ")
    reg = s.templates
    spec = reg.add("Noted: {}.")
    entry = s.apply(SayTemplate(spec.id, (span(s, 1, 2),)))
    assert entry.text == "Noted: HQ."


def test_token_filler_still_needs_matching_kind(backend):
    # typed slots stay typed even when raw tokens are allowed
    s = create_session(
        backend, address=SOURCE_ADDRESS, config=SessionConfig(allow_token_fillers=True)
    )
    s.add_user_utterance("find Starbucks")
    with pytest.raises(SlotTypeError):
        s.apply(SayTemplate("t11", (span(s, 1, 1),)))


# -- driving and closing -----------------------------------------------------


def complete_walkthrough(s):
    s.apply(find_place_action(s))
    s.apply(
        SayTemplate(
            "t3",
            (field("v1", "name"), field("v1", "street_name"), field("v1", "duration")),
        )
    )
    s.apply(SayTemplate("t4", ()))
    s.apply(WaitForUser())


def test_start_driving(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    s.add_user_utterance("Yes, let's go!")
    entry = s.apply(StartDriving(field("v1", "latitude"), field("v1", "longitude")))
    assert s.driving
    assert s.destination == (entry.latitude, entry.longitude)
    assert entry.latitude_ref.ref == "v1.latitude"


def test_start_driving_checks_kinds(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    with pytest.raises(SlotTypeError):
        s.apply(StartDriving(field("v1", "longitude"), field("v1", "latitude")))


def test_driving_blocks_further_actions(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    s.add_user_utterance("Yes, let's go!")
    s.apply(StartDriving(field("v1", "latitude"), field("v1", "longitude")))
    with pytest.raises(SessionClosed):
        s.apply(WaitForUser())
    with pytest.raises(SessionClosed):
        s.add_user_utterance("wait, actually")
    entry = s.close("approve")
    assert entry.value == "approve"
    assert s.closed


def test_close_seals_session(walkthrough_session):
    s = walkthrough_session
    s.close("disapprove", reason="absent")
    assert s.outcome == "disapprove"
    with pytest.raises(SessionClosed):
        s.apply(WaitForUser())
    with pytest.raises(SessionClosed):
        s.close("approve")


def test_close_validates_value(walkthrough_session):
    with pytest.raises(SchemaError):
        walkthrough_session.close("maybe")


# -- reply text and decisions ------------------------------------------------


def test_last_turn_text_joins_with_double_space(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    assert s.last_turn_text() == (
        "Starbucks on Venice Boulevard is 10 minutes away.  Shall we go?"
    )


def test_last_turn_text_resets_on_user_turn(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    s.add_user_utterance("Yes, let's go!")
    assert s.last_turn_text() == ""


def test_walkthrough_decisions(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    decisions = s.decisions
    assert len(decisions) == 10
    assert decisions == [
        ClickDecision("action", "find_place"),
        ClickDecision("query", "Starbucks Venice Boulevard"),
        ClickDecision("parameter", "source.latitude"),
        ClickDecision("parameter", "source.longitude"),
        ClickDecision("action", "t3"),
        ClickDecision("parameter", "v1.name"),
        ClickDecision("parameter", "v1.street_name"),
        ClickDecision("parameter", "v1.duration"),
        ClickDecision("action", "t4"),
        ClickDecision("action", "wait_for_user"),
    ]


def test_full_session_decisions(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    s.add_user_utterance("Yes, let's go!")
    s.apply(StartDriving(field("v1", "latitude"), field("v1", "longitude")))
    s.close("approve")
    cats = [d.category for d in s.decisions]
    assert cats == [
        "action", "query", "parameter", "parameter",
        "action", "parameter", "parameter", "parameter",
        "action", "action",
        "action", "parameter", "parameter",
    ]


def test_wait_synthesized_before_user_turn(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    s.add_user_utterance("is it open")
    # no wait was recorded, but handing back the turn was still a decision
    payloads = [(d.category, d.payload) for d in s.decisions]
    assert payloads == [
        ("action", "find_place"),
        ("query", "Starbucks Venice Boulevard"),
        ("parameter", "source.latitude"),
        ("parameter", "source.longitude"),
        ("action", "wait_for_user"),
    ]


def test_no_wait_synthesized_when_recorded(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    s.apply(WaitForUser())
    s.add_user_utterance("is it open")
    waits = [d for d in s.decisions if d.payload == "wait_for_user"]
    assert len(waits) == 1


def test_trailing_wait_only_after_utterance(walkthrough_session):
    s = walkthrough_session
    s.apply(find_place_action(s))
    # abandoned mid-composition: api call at end of log is not a hand-back
    assert [d.payload for d in s.decisions][-1] == "source.longitude"


def test_no_wait_before_first_utterance(backend):
    s = create_session(backend, address=SOURCE_ADDRESS)
    s.add_user_utterance("hello")
    assert s.decisions == []


def test_decisions_pure_function(walkthrough_session):
    s = walkthrough_session
    complete_walkthrough(s)
    assert session_decisions(s.entries) == s.decisions


def test_unmodelled_result_fields_are_dropped(backend):
    class Extra:
        backend_id = "extra"
        dataset_version = "extra"

        def geocode(self, address):
            return 33.98, -118.44

        def find_place(self, query, lat, lng):
            return {"name": "X", "vibe": "chill", "rating": "4.5"}

    s = create_session(Extra(), address="anywhere")
    entry = s.apply(
        CallApi(
            "find_place",
            (Literal("x"), field("source", "latitude"), field("source", "longitude")),
        )
    )
    assert entry.results[0] == {FieldKind.NAME: "X", FieldKind.RATING: 4.5}
