"""Shared fixtures.

The synthetic corpus takes a moment to generate, so it is built once per
session and shared read-only; tests that mutate logs must copy first.
"""

import pytest

from meep.agent import load_cases, load_rules
from meep.logfile import SessionLogFile
from meep.places import FieldKind, load_bundled_dataset
from meep.session import (
    CallApi,
    SayTemplate,
    StartDriving,
    TokenSpan,
    VarField,
    WaitForUser,
    create_session,
)
from meep.synthetic import CorpusConfig, corpus_backend, generate_corpus, split_corpus


@pytest.fixture(scope="session")
def dataset():
    return load_bundled_dataset()


@pytest.fixture(scope="session")
def backend(dataset):
    return corpus_backend(dataset)


@pytest.fixture(scope="session")
def rules():
    return load_rules()


@pytest.fixture(scope="session")
def cases():
    return load_cases()


@pytest.fixture(scope="session")
def corpus(backend):
    return generate_corpus(backend, CorpusConfig())


@pytest.fixture(scope="session")
def splits(corpus):
    return split_corpus(corpus)


@pytest.fixture(scope="session")
def walkthrough_log(backend):
    """The full reference dialog, played by hand and driven to approval."""
    s = create_session(
        backend,
        address="xxx Admiralty Way, Marina del Rey",
        session_id="walk",
        timestamp="2026-08-22T10:00:00",
    )
    s.add_user_utterance("I want to go to Starbucks on Venice Boulevard")
    query = TokenSpan(tuple(s.token_at(1, i) for i in (5, 7, 8)))
    s.apply(
        CallApi(
            "find_place",
            (
                query,
                VarField("source", FieldKind.LATITUDE),
                VarField("source", FieldKind.LONGITUDE),
            ),
        )
    )
    s.apply(
        SayTemplate(
            "t3",
            (
                VarField("v1", FieldKind.NAME),
                VarField("v1", FieldKind.STREET_NAME),
                VarField("v1", FieldKind.DURATION),
            ),
        )
    )
    s.apply(SayTemplate("t4", ()))
    s.apply(WaitForUser())
    s.add_user_utterance("Yes, let's go!")
    s.apply(StartDriving(VarField("v1", FieldKind.LATITUDE), VarField("v1", FieldKind.LONGITUDE)))
    s.close("approve")
    return SessionLogFile.from_session(s)
