from __future__ import annotations

import random
import string

import pytest

from talklearn.learning import (
    BOX_INTERVALS_MS,
    DIRECTION_RECEIVED,
    DIRECTION_SENT,
    InsufficientMaterialError,
    KIND_RECOGNIZE,
    KIND_RETELL,
    LearningItem,
    build_language_test,
    grade_answer,
    harvest_items,
    levenshtein,
    normalize,
    pick_item,
    score_test,
    update_box,
)
from talklearn.telemetry import TimelineEvent

from helpers import levenshtein_matrix


def _item(iid="li-1", foreign="bonjour monde", native="hello world", box=1, due=0):
    return LearningItem(
        id=iid,
        source_utterance_id="u1",
        direction=DIRECTION_RECEIVED,
        prompt_kind="Review",
        native_text=native,
        foreign_text=foreign,
        box=box,
        due_at=due,
    )


def _translated_event(seq, speaker, utt, source_text, text, t=1000):
    return TimelineEvent(
        seq, "s", "TranslatedText", speaker, utt, t, t + 500,
        {"source_text": source_text, "text": text, "source": "Machine"},
    )


class TestLevenshtein:
    def test_known_values(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("", "abc") == 3
        assert levenshtein("same", "same") == 0

    def test_matches_matrix_oracle(self):
        rng = random.Random(17)
        alphabet = string.ascii_lowercase[:6] + " "
        for _ in range(300):
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 16)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 16)))
            assert levenshtein(a, b) == levenshtein_matrix(a, b), (a, b)


class TestGradeAnswer:
    def test_exact_match(self):
        assert grade_answer("bonjour monde", "bonjour monde") == (1.0, True)

    def test_one_char_off(self):
        # Edit distance 1 against a 13 character expected string.
        similarity, correct = grade_answer("bonjour monde", "bonjour mond")
        assert similarity == pytest.approx(1 - 1 / 13, abs=1e-12)
        assert correct

    def test_empty_answer(self):
        similarity, correct = grade_answer("bonjour monde", "")
        assert similarity == 0.0
        assert not correct

    def test_normalization(self):
        similarity, correct = grade_answer("Bonjour   Monde", "bonjour monde")
        assert similarity == 1.0 and correct

    def test_symmetry(self):
        rng = random.Random(3)
        for _ in range(100):
            a = "".join(rng.choice("abcd ") for _ in range(rng.randint(0, 12)))
            b = "".join(rng.choice("abcd ") for _ in range(rng.randint(0, 12)))
            assert grade_answer(a, b)[0] == grade_answer(b, a)[0]


class TestUpdateBox:
    def test_promotion(self):
        item = update_box(_item(box=1), True, now=1000)
        assert item.box == 2
        assert item.due_at == 1000 + BOX_INTERVALS_MS[2]
        assert item.history == ((1000, True),)

    def test_cap_at_five(self):
        item = update_box(_item(box=5), True, now=0)
        assert item.box == 5

    def test_incorrect_resets(self):
        item = update_box(_item(box=4), False, now=500)
        assert item.box == 1
        assert item.due_at == 500 + BOX_INTERVALS_MS[1]

    def test_bounds_under_random_sequences(self):
        rng = random.Random(11)
        item = _item()
        for step in range(2000):
            item = update_box(item, rng.random() < 0.6, now=step)
            assert 1 <= item.box <= 5


class TestPickItem:
    def test_fitting_item_returned(self):
        item = _item()  # 13 chars * 60 + 2000 = 2780 ms
        assert pick_item([item], remaining_ms=6000, now=0) is item

    def test_too_small_window(self):
        assert pick_item([_item()], remaining_ms=2000, now=0) is None

    def test_lower_box_first_at_equal_due(self):
        a = _item(iid="li-a", box=3)
        b = _item(iid="li-b", box=1, foreign="bonjour")
        assert pick_item([a, b], remaining_ms=60000, now=0).id == "li-b"

    def test_not_due_items_skipped(self):
        assert pick_item([_item(due=5000)], remaining_ms=60000, now=100) is None


class TestHarvest:
    def test_directions(self):
        events = [
            _translated_event(1, "alice", "u1", "hello world", "bonjour monde"),
            _translated_event(2, "bob", "u2", "merci ami", "thanks friend"),
        ]
        items = harvest_items(events, "alice")
        assert len(items) == 2
        sent = next(i for i in items if i.direction == DIRECTION_SENT)
        received = next(i for i in items if i.direction == DIRECTION_RECEIVED)
        assert (sent.native_text, sent.foreign_text) == ("hello world", "bonjour monde")
        assert (received.native_text, received.foreign_text) == ("thanks friend", "merci ami")

    def test_untranslated_produces_nothing(self):
        events = [
            TimelineEvent(1, "s", "OriginalMedia", "alice", "u1", 0, 100,
                          {"translate_requested": False, "practice": False}),
        ]
        assert harvest_items(events, "alice") == []

    def test_duplicates_collapse(self):
        events = [
            _translated_event(1, "bob", "u1", "merci ami", "thanks friend"),
            _translated_event(2, "bob", "u2", "merci ami", "thanks friend", t=5000),
        ]
        assert len(harvest_items(events, "alice")) == 1

    def test_texts_appear_verbatim(self):
        events = [_translated_event(1, "bob", "u1", "merci ami", "thanks friend")]
        item = harvest_items(events, "alice")[0]
        assert item.foreign_text == "merci ami"
        assert item.native_text == "thanks friend"


def _log_with_sentences(n):
    events = []
    for i in range(n):
        speaker = "alice" if i % 2 == 0 else "bob"
        events.append(
            _translated_event(i + 1, speaker, f"u{i}", f"source sentence {i}", f"target sentence {i}", t=1000 * i)
        )
    return events


class TestLanguageTest:
    def test_deterministic_for_seed(self):
        events = _log_with_sentences(10)
        first = build_language_test(events, 4, seed=7)
        second = build_language_test(events, 4, seed=7)
        assert first == second
        different = build_language_test(events, 4, seed=8)
        assert different != first

    def test_alternates_kinds(self):
        test = build_language_test(_log_with_sentences(10), 4, seed=1)
        assert [i.kind for i in test.items] == [
            KIND_RETELL, KIND_RECOGNIZE, KIND_RETELL, KIND_RECOGNIZE,
        ]

    def test_insufficient_material(self):
        with pytest.raises(InsufficientMaterialError):
            build_language_test(_log_with_sentences(2), 4, seed=1)

    def test_recognize_choices_distinct_and_from_log(self):
        events = _log_with_sentences(12)
        natives = {f"target sentence {i}" for i in range(12)}
        for seed in range(10):
            test = build_language_test(events, 6, seed=seed)
            for item in test.items:
                if item.kind != KIND_RECOGNIZE:
                    continue
                assert len(item.choices) == 4
                assert len(set(item.choices)) == 4
                assert item.expected in item.choices
                assert set(item.choices) <= natives

    def test_participant_perspective(self):
        events = [
            _translated_event(1, "alice", "u1", "hello world", "bonjour monde"),
            _translated_event(2, "bob", "u2", "merci ami", "thanks friend"),
            _translated_event(3, "bob", "u3", "bon jour", "good day"),
            _translated_event(4, "bob", "u4", "bon soir", "good evening"),
        ]
        test = build_language_test(events, 2, seed=0, participant="alice")
        for item in test.items:
            # Alice's foreign side is always the French-looking text.
            assert item.foreign_text in {"bonjour monde", "merci ami", "bon jour", "bon soir"}


class TestScoreTest:
    def test_all_exact(self):
        test = build_language_test(_log_with_sentences(8), 4, seed=2)
        answers = [i.expected for i in test.items]
        result = score_test(test, answers, participant="alice")
        assert result.n_retold + result.n_recognized == 4

    def test_all_blank(self):
        test = build_language_test(_log_with_sentences(8), 4, seed=2)
        result = score_test(test, [None] * 4)
        assert result.n_retold == 0
        assert result.n_recognized == 0

    def test_retell_normalizes_case_and_whitespace(self):
        test = build_language_test(_log_with_sentences(8), 1, seed=2)
        item = test.items[0]
        assert item.kind == KIND_RETELL
        result = score_test(test, ["  " + item.expected.upper() + "  "])
        assert result.n_retold == 1

    def test_missing_answers_incorrect(self):
        test = build_language_test(_log_with_sentences(8), 4, seed=2)
        result = score_test(test, [test.items[0].expected])
        assert result.n_retold == 1
        assert result.n_recognized == 0
