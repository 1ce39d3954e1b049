"""Seeded random trace generation for simulations, demos, and tests."""

from __future__ import annotations

import random
import string

from .config import default_lexicon
from .core import Participant
from .trace import Trace, UtteranceSpec
from .translation import Lexicon

DEFAULT_PARTICIPANTS = (
    Participant("alice", "en", "fr"),
    Participant("bob", "fr", "en"),
)


def _sentence(rng: random.Random, words: list[str], n_min: int = 3, n_max: int = 8) -> str:
    return " ".join(rng.choice(words) for _ in range(rng.randint(n_min, n_max)))


def _nonsense_word(rng: random.Random) -> str:
    return "zq" + "".join(rng.choice(string.ascii_lowercase) for _ in range(4))


def _energies(rng: random.Random) -> tuple[float, ...]:
    """A silence-speech-silence energy profile with one optional short gap."""
    lead = rng.randint(0, 4)
    active = rng.randint(8, 40)
    tail = rng.randint(0, 5)
    frames = [0.0] * lead
    gap_at = rng.randint(3, active - 3) if active > 8 and rng.random() < 0.4 else None
    for i in range(active):
        if gap_at is not None and gap_at <= i < gap_at + 2:
            frames.append(rng.uniform(0.0, 0.05))
        else:
            frames.append(rng.uniform(0.25, 0.9))
    frames.extend(0.0 for _ in range(tail))
    return tuple(round(f, 3) for f in frames)


def generate_trace(
    seed: int,
    n_utterances: int = 20,
    lexicon: Lexicon | None = None,
    session_id: str | None = None,
    p_untranslated: float = 0.15,
    p_practice: float = 0.12,
    p_energies: float = 0.12,
    p_long_gap: float = 0.45,
    rate_ms_per_char: int = 60,
) -> Trace:
    """Deterministic random two-party conversation.

    Mixes translated, untranslated, and practice utterances; some captures
    carry explicit durations or frame energies. Gaps are long often enough
    that free windows open up for learning prompts.
    """
    rng = random.Random(f"trace:{seed}")
    lex = lexicon or default_lexicon()
    participants = DEFAULT_PARTICIPANTS
    native_words = {
        participants[0].id: lex.words(participants[0].native_language),
        participants[1].id: lex.words(participants[1].native_language),
    }
    foreign_words = {
        participants[0].id: lex.words(participants[0].foreign_language),
        participants[1].id: lex.words(participants[1].foreign_language),
    }

    utterances: list[UtteranceSpec] = []
    cursor = rng.randint(0, 1000)
    busy_until = {p.id: 0 for p in participants}
    speaker = rng.choice(participants).id
    for index in range(n_utterances):
        if rng.random() < 0.6:
            speaker = participants[0].id if speaker == participants[1].id else participants[1].id
        translate = True
        practice = False
        roll = rng.random()
        if roll < p_untranslated:
            translate = False
        elif roll < p_untranslated + p_practice and index >= 3:
            practice = True
        if translate and not practice:
            text = _sentence(rng, native_words[speaker])
        else:
            text = _sentence(rng, foreign_words[speaker], n_min=2, n_max=5)
            if not practice and rng.random() < 0.3:
                words = text.split()
                words[rng.randrange(len(words))] = _nonsense_word(rng)
                text = " ".join(words)

        duration_ms = None
        energies = None
        shape = rng.random()
        if shape < p_energies:
            energies = _energies(rng)
        elif shape < p_energies + 0.2:
            duration_ms = rng.randint(800, 3500)

        t = max(cursor, busy_until[speaker])
        spec = UtteranceSpec(
            speaker=speaker,
            t=t,
            text=text,
            translate=translate,
            practice=practice,
            id=f"u{index:03d}",
            duration_ms=duration_ms,
            frame_energies=energies,
        )
        utterances.append(spec)
        from .trace import resolve_duration

        duration = resolve_duration(spec, rate_ms_per_char=rate_ms_per_char)
        busy_until[speaker] = t + duration
        if rng.random() < p_long_gap:
            gap = rng.randint(4500, 10000)
        else:
            gap = rng.randint(300, 2500)
        cursor = t + duration + gap

    return Trace(
        session_id=session_id or f"random-{seed}",
        participants=participants,
        utterances=tuple(utterances),
        keywords=("story", "random"),
    )
