import pytest

from meep.logfile import serialize, validate
from meep.session import OutcomeEntry
from meep.synthetic import (
    CORPUS_CLOCK,
    CorpusConfig,
    corpus_backend,
    generate_corpus,
    read_corpus,
    split_corpus,
    write_corpus,
    write_splits,
)


def test_corpus_backend_pins_clock(dataset):
    b = corpus_backend(dataset)
    assert b.clock() == CORPUS_CLOCK
    assert CORPUS_CLOCK.isoformat() == "2026-08-22T14:30:00"


def test_corpus_size_and_ids(corpus):
    assert len(corpus) == 120
    assert [log.meta.session_id for log in corpus] == [
        f"syn-7-{i:03d}" for i in range(120)
    ]
    assert all(log.meta.timestamp == "2026-08-22T10:00:00" for log in corpus)
    assert all(log.meta.backend_id == "fixture" for log in corpus)


def test_every_log_validates(corpus):
    for log in corpus:
        text = serialize(log)
        assert serialize(validate(text)) == text


def test_every_log_closes(corpus):
    for log in corpus:
        last = log.entries[-1]
        assert isinstance(last, OutcomeEntry)
        assert last.value in ("approve", "disapprove")


def test_corpus_has_both_outcomes(corpus):
    outcomes = {log.entries[-1].value for log in corpus}
    assert outcomes == {"approve", "disapprove"}


def test_dialog_shapes_vary(corpus):
    """The mix should cover one-shot and multi-turn dialogs."""
    from meep.evaluation import count_turns

    turn_counts = {count_turns(log.entries) for log in corpus}
    assert min(turn_counts) >= 2
    assert max(turn_counts) >= 6


def test_regeneration_is_byte_identical(backend, corpus):
    again = generate_corpus(backend, CorpusConfig())
    assert [serialize(a) for a in again] == [serialize(b) for b in corpus]


def test_seed_changes_corpus(backend, corpus):
    other = generate_corpus(backend, CorpusConfig(seed=8, n_dialogs=5))
    first = {log.meta.session_id: serialize(log) for log in corpus}
    assert all(log.meta.session_id.startswith("syn-8-") for log in other)
    assert serialize(other[0]) != first["syn-7-000"]


def test_write_read_round_trip(corpus, tmp_path):
    sample = corpus[:5]
    paths = write_corpus(sample, tmp_path / "c")
    assert [p.name for p in paths] == [f"syn-7-{i:03d}.log" for i in range(5)]
    back = read_corpus(tmp_path / "c")
    assert [serialize(log) for log in back] == [serialize(log) for log in sample]


def test_split_sizes(splits):
    assert {k: len(v) for k, v in splits.items()} == {"train": 96, "dev": 12, "test": 12}


def test_split_is_a_partition(corpus, splits):
    ids = [log.meta.session_id for part in splits.values() for log in part]
    assert sorted(ids) == sorted(log.meta.session_id for log in corpus)
    assert len(set(ids)) == len(ids)


def test_split_remainder_goes_to_train(corpus):
    splits = split_corpus(corpus[:10], (0.5, 0.25, 0.25))
    assert {k: len(v) for k, v in splits.items()} == {"train": 6, "dev": 2, "test": 2}
    # 7 dialogs: dev and test floor to 1 each, train absorbs the rest
    uneven = split_corpus(corpus[:7], (0.8, 0.1, 0.1))
    assert {k: len(v) for k, v in uneven.items()} == {"train": 7, "dev": 0, "test": 0}


def test_split_deterministic(corpus):
    a = split_corpus(corpus)
    b = split_corpus(corpus)
    assert [x.meta.session_id for x in a["test"]] == [x.meta.session_id for x in b["test"]]
    c = split_corpus(corpus, seed=1)
    assert [x.meta.session_id for x in a["test"]] != [x.meta.session_id for x in c["test"]]


def test_split_rejects_bad_fractions(corpus):
    with pytest.raises(ValueError):
        split_corpus(corpus, (0.8, 0.1, 0.2))


def test_write_splits(splits, tmp_path):
    small = {k: v[:2] for k, v in splits.items()}
    write_splits(small, tmp_path)
    for name in ("train", "dev", "test"):
        assert len(read_corpus(tmp_path / name)) == 2
