"""Wait-learning: harvest bilingual items from the conversation, pick them
into free windows on a five-box spaced-repetition schedule, grade answers,
and build/score the post-session language test.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace

from .core import TRANSLATED_TEXT
from .telemetry import SOURCE_MACHINE
from .translation import synthesize_speech

DIRECTION_RECEIVED = "Received"
DIRECTION_SENT = "Sent"

KIND_REVIEW = "Review"
KIND_RETELL = "Retell"
KIND_RECOGNIZE = "Recognize"

MAX_BOX = 5

# Review intervals per box level, in ms: 1 min, 5 min, 30 min, 2 h, 1 day.
BOX_INTERVALS_MS = {
    1: 60_000,
    2: 300_000,
    3: 1_800_000,
    4: 7_200_000,
    5: 86_400_000,
}

CORRECT_THRESHOLD = 0.8
ANSWER_ALLOWANCE_MS = 2000

_WHITESPACE = re.compile(r"\s+")


class InsufficientMaterialError(ValueError):
    """The log does not hold enough distinct sentences for a test."""


@dataclass(frozen=True)
class LearningItem:
    id: str
    source_utterance_id: str
    direction: str
    prompt_kind: str
    native_text: str
    foreign_text: str
    box: int = 1
    due_at: int = 0
    history: tuple[tuple[int, bool], ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= self.box <= MAX_BOX:
            raise ValueError(f"item {self.id!r}: box {self.box} outside 1..{MAX_BOX}")
        if not self.native_text or not self.foreign_text:
            raise ValueError(f"item {self.id!r}: both texts must be nonempty")


@dataclass(frozen=True)
class TestItem:
    kind: str
    foreign_text: str
    expected: str
    choices: tuple[str, ...] | None = None


@dataclass(frozen=True)
class LanguageTest:
    id: str
    seed: int
    items: tuple[TestItem, ...]


@dataclass(frozen=True)
class TestResult:
    test_id: str
    participant: str
    n_retold: int
    n_recognized: int
    per_item: tuple[dict, ...]


def normalize(text: str) -> str:
    return _WHITESPACE.sub(" ", text.strip().lower())


def levenshtein(a: str, b: str) -> int:
    """Iterative two-row edit distance."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def grade_answer(
    expected: str, answer: str, threshold: float = CORRECT_THRESHOLD
) -> tuple[float, bool]:
    """Similarity in [0,1] between normalized strings, and whether it clears
    the correctness threshold. Symmetric in its arguments."""
    e, a = normalize(expected), normalize(answer)
    longest = max(len(e), len(a))
    if longest == 0:
        return 1.0, True
    similarity = 1.0 - levenshtein(e, a) / longest
    return similarity, similarity >= threshold


def update_box(item: LearningItem, correct: bool, now: int) -> LearningItem:
    """Promote on a correct answer (capped), reset to box 1 otherwise; the
    next due time follows the new box's interval."""
    new_box = min(item.box + 1, MAX_BOX) if correct else 1
    return replace(
        item,
        box=new_box,
        due_at=now + BOX_INTERVALS_MS[new_box],
        history=item.history + ((now, correct),),
    )


def estimate_exercise_ms(
    item: LearningItem,
    rate_ms_per_char: int = 60,
    answer_allowance_ms: int = ANSWER_ALLOWANCE_MS,
) -> int:
    """Time needed to show and answer one item."""
    return synthesize_speech(item.foreign_text, rate_ms_per_char) + answer_allowance_ms


def pick_item(
    items: list[LearningItem],
    remaining_ms: float,
    now: int,
    rate_ms_per_char: int = 60,
    answer_allowance_ms: int = ANSWER_ALLOWANCE_MS,
) -> LearningItem | None:
    """Earliest-due item whose estimated exercise fits the remaining window;
    ties at equal due time go to the lower box."""
    due = [item for item in items if item.due_at <= now]
    due.sort(key=lambda i: (i.due_at, i.box, i.id))
    for item in due:
        if estimate_exercise_ms(item, rate_ms_per_char, answer_allowance_ms) <= remaining_ms:
            return item
    return None


def _translated_pairs(events) -> list[tuple[str, str, str, str]]:
    """(utterance_id, speaker, source_text, translated_text) per machine
    translation in the log, in log order."""
    pairs = []
    for ev in events:
        if ev.kind != TRANSLATED_TEXT:
            continue
        if ev.payload.get("source") != SOURCE_MACHINE:
            continue
        pairs.append(
            (ev.utt or "", ev.participant or "", ev.payload.get("source_text", ""), ev.payload.get("text", ""))
        )
    return pairs


def harvest_items(events, participant: str) -> list[LearningItem]:
    """One review item per translated message the participant received or
    sent. Received items pair the incoming original text (foreign) with its
    translation (native); sent items pair the participant's own text (native)
    with its translation (foreign). Duplicate text pairs are kept once."""
    items: list[LearningItem] = []
    seen: set[tuple[str, str]] = set()
    counter = 0
    for utt_id, speaker, source_text, translated in _translated_pairs(events):
        if not source_text or not translated:
            continue
        if speaker == participant:
            direction, native, foreign = DIRECTION_SENT, source_text, translated
        else:
            direction, native, foreign = DIRECTION_RECEIVED, translated, source_text
        key = (normalize(native), normalize(foreign))
        if key in seen:
            continue
        seen.add(key)
        counter += 1
        items.append(
            LearningItem(
                id=f"li-{participant}-{counter:03d}",
                source_utterance_id=utt_id,
                direction=direction,
                prompt_kind=KIND_REVIEW,
                native_text=native,
                foreign_text=foreign,
            )
        )
    return items


def build_language_test(
    events,
    n_items: int,
    seed: int,
    participant: str | None = None,
) -> LanguageTest:
    """Seeded sample of the session's translated sentences, alternating
    retell and recognize prompts.

    With a participant, pairs come from their perspective via harvesting;
    otherwise each message is taken from its receiver's side. Recognize
    distractors are three other native-side sentences from the same log.
    """
    if participant:
        pool = [
            (item.foreign_text, item.native_text) for item in harvest_items(events, participant)
        ]
    else:
        pool = []
        seen: set[tuple[str, str]] = set()
        for _, _, source_text, translated in _translated_pairs(events):
            key = (normalize(source_text), normalize(translated))
            if key in seen or not source_text or not translated:
                continue
            seen.add(key)
            pool.append((source_text, translated))
    natives = list(dict.fromkeys(native for _, native in pool))
    if len(pool) < n_items or len(natives) < 4:
        raise InsufficientMaterialError(
            f"need at least {max(n_items, 4)} distinct translated sentences, "
            f"have {len(pool)} pairs with {len(natives)} distinct translations"
        )
    rng = random.Random(seed)
    sample = rng.sample(pool, n_items)
    items: list[TestItem] = []
    for index, (foreign, native) in enumerate(sample):
        if index % 2 == 0:
            items.append(TestItem(kind=KIND_RETELL, foreign_text=foreign, expected=foreign))
        else:
            distractors = rng.sample([n for n in natives if n != native], 3)
            choices = distractors + [native]
            rng.shuffle(choices)
            items.append(
                TestItem(
                    kind=KIND_RECOGNIZE,
                    foreign_text=foreign,
                    expected=native,
                    choices=tuple(choices),
                )
            )
    return LanguageTest(id=f"test-{seed}-{n_items}", seed=seed, items=tuple(items))


def score_test(
    test: LanguageTest,
    answers: list[str | None],
    participant: str = "",
    threshold: float = CORRECT_THRESHOLD,
) -> TestResult:
    """Grade retell items by similarity against the foreign text and
    recognize items by choice equality. Missing answers score incorrect."""
    n_retold = 0
    n_recognized = 0
    per_item: list[dict] = []
    for index, item in enumerate(test.items):
        answer = answers[index] if index < len(answers) else None
        if item.kind == KIND_RETELL:
            similarity, correct = grade_answer(item.expected, answer or "", threshold)
            n_retold += int(correct)
            per_item.append(
                {"index": index, "kind": item.kind, "similarity": similarity, "correct": correct}
            )
        else:
            correct = answer is not None and answer == item.expected
            n_recognized += int(correct)
            per_item.append({"index": index, "kind": item.kind, "correct": correct})
    return TestResult(
        test_id=test.id,
        participant=participant,
        n_retold=n_retold,
        n_recognized=n_recognized,
        per_item=tuple(per_item),
    )
