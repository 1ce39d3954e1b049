"""Transcription, translation, and speech-synthesis backends.

The mock backend is deterministic: perfect transcription, word-by-word
bijective lexicon translation, duration-by-character speech synthesis, and a
seeded latency model. A remote HTTP adapter covers live deployments.
"""

from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass

import httpx

UNKNOWN_OPEN = "⟦"   # ⟦
UNKNOWN_CLOSE = "⟧"  # ⟧

MIN_SPEECH_MS = 200

_STRIP_CHARS = string.punctuation + "¿¡…“”‘’"


class LexiconError(ValueError):
    """Lexicon cannot serve the requested language pair or is not bijective."""


class TranslationFailedError(Exception):
    """Remote translation gave up. reason is one of timeout|malformed|status."""

    def __init__(self, reason: str, attempts: int, detail: str = "") -> None:
        super().__init__(f"translation failed ({reason}) after {attempts} attempt(s) {detail}".strip())
        self.reason = reason
        self.attempts = attempts


@dataclass(frozen=True)
class TranslationResult:
    utterance_id: str
    transcribed_text: str
    translated_text: str
    speech_duration_ms: int
    source: str  # "Machine" | "None"
    t_requested: int
    t_completed: int


class Lexicon:
    """Case-insensitive bijective word map between one language pair.

    Lookups lowercase their input and emit lowercase, so translating there
    and back restores the case-normalized original.
    """

    def __init__(self, src: str, dst: str, entries: dict[str, str]) -> None:
        forward: dict[str, str] = {}
        inverse: dict[str, str] = {}
        for word, translated in entries.items():
            key, value = word.lower(), translated.lower()
            if key in forward:
                raise LexiconError(f"duplicate source word {key!r}")
            if value in inverse:
                raise LexiconError(f"target word {value!r} has two source words")
            forward[key] = value
            inverse[value] = key
        self.src = src
        self.dst = dst
        self._forward = forward
        self._inverse = inverse

    def supports(self, src: str, dst: str) -> bool:
        return (src, dst) in ((self.src, self.dst), (self.dst, self.src))

    def mapping(self, src: str, dst: str) -> dict[str, str]:
        if (src, dst) == (self.src, self.dst):
            return self._forward
        if (src, dst) == (self.dst, self.src):
            return self._inverse
        raise LexiconError(f"unsupported language pair {src}->{dst}")

    def words(self, language: str) -> list[str]:
        if language == self.src:
            return sorted(self._forward)
        if language == self.dst:
            return sorted(self._inverse)
        raise LexiconError(f"unknown language {language!r}")

    @classmethod
    def load(cls, path: str, src: str, dst: str) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict) and "entries" in data:
            return cls(data.get("src", src), data.get("dst", dst), data["entries"])
        return cls(src, dst, data)


def _split_token(token: str) -> tuple[str, str, str]:
    """Split a token into (leading punctuation, core word, trailing punctuation)."""
    start, end = 0, len(token)
    while start < end and token[start] in _STRIP_CHARS:
        start += 1
    while end > start and token[end - 1] in _STRIP_CHARS:
        end -= 1
    return token[:start], token[start:end], token[end:]


def translate(text: str, src: str, dst: str, lexicon: Lexicon) -> str:
    """Word-by-word translation; punctuation rides along with its token and
    unknown words come out wrapped in ⟦ ⟧ so they are visible in captions."""
    mapping = lexicon.mapping(src, dst)
    out: list[str] = []
    for token in text.split():
        prefix, core, suffix = _split_token(token)
        if not core:
            out.append(token)
            continue
        wrapped = core.startswith(UNKNOWN_OPEN) and core.endswith(UNKNOWN_CLOSE)
        word = core[1:-1] if wrapped else core
        translated = mapping.get(word.lower())
        if translated is None:
            translated = f"{UNKNOWN_OPEN}{word}{UNKNOWN_CLOSE}"
        out.append(f"{prefix}{translated}{suffix}")
    return " ".join(out)


def transcribe(utterance) -> str:
    """Mock transcription returns the captured ground-truth text verbatim."""
    return utterance.text


def covered(text: str, language: str, lexicon: Lexicon) -> bool:
    """True when every word of the text is a known word of that language.

    Used to judge whether an untranslated message was phrased in real
    foreign-language vocabulary.
    """
    try:
        words = set(lexicon.words(language))
    except LexiconError:
        return False
    found_any = False
    for token in text.split():
        _, core, _ = _split_token(token)
        if not core:
            continue
        found_any = True
        if core.lower() not in words:
            return False
    return found_any


def synthesize_speech(text: str, rate_ms_per_char: int = 60) -> int:
    """Speech duration in ms: character count (unknown-word markers excluded)
    times the per-character rate, floored at MIN_SPEECH_MS."""
    if not text:
        raise ValueError("cannot synthesize empty text")
    if rate_ms_per_char <= 0:
        raise ValueError("rate must be positive")
    chars = len(text.replace(UNKNOWN_OPEN, "").replace(UNKNOWN_CLOSE, ""))
    return max(chars * rate_ms_per_char, MIN_SPEECH_MS)


@dataclass(frozen=True)
class LatencyModel:
    base_ms: int = 500
    per_char_ms: int = 20
    jitter_ms: int = 100

    def latency(self, text: str, rng: random.Random) -> int:
        """Deterministic given the rng stream position; never negative."""
        value = self.base_ms + self.per_char_ms * len(text)
        if self.jitter_ms > 0:
            value += rng.randint(-self.jitter_ms, self.jitter_ms)
        return max(value, 0)

    def lower_bound(self, text_length: int) -> int:
        return max(self.base_ms + self.per_char_ms * text_length - self.jitter_ms, 0)


class MockTranslator:
    """Deterministic in-process backend used by the simulator and tests."""

    def __init__(
        self,
        lexicon: Lexicon,
        rate_ms_per_char: int = 60,
        latency_model: LatencyModel | None = None,
    ) -> None:
        self.lexicon = lexicon
        self.rate_ms_per_char = rate_ms_per_char
        self.latency_model = latency_model or LatencyModel()

    def run(self, utterance, src: str, dst: str, now: int, rng: random.Random) -> TranslationResult:
        """Transcribe, translate, and synthesize one utterance; the result's
        completion time models the translation wait."""
        transcribed = transcribe(utterance)
        translated = translate(transcribed, src, dst, self.lexicon)
        duration = synthesize_speech(translated, self.rate_ms_per_char)
        delay = self.latency_model.latency(transcribed, rng)
        return TranslationResult(
            utterance_id=utterance.id,
            transcribed_text=transcribed,
            translated_text=translated,
            speech_duration_ms=duration,
            source="Machine",
            t_requested=now,
            t_completed=now + delay,
        )


def passthrough_result(utterance, now: int, rate_ms_per_char: int = 60) -> TranslationResult:
    """Result for a message sent without translation: the text stands as its
    own caption and the original audio is kept, so latency is zero."""
    transcribed = transcribe(utterance)
    return TranslationResult(
        utterance_id=utterance.id,
        transcribed_text=transcribed,
        translated_text=transcribed,
        speech_duration_ms=utterance.capture_end - utterance.capture_start,
        source="None",
        t_requested=now,
        t_completed=now,
    )


class RemoteTranslator:
    """HTTP adapter: POST {text, src, dst} to <endpoint>/translate, expect
    {"text": ...}. One retry on timeout; other failures are final."""

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 2.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self._client = client or httpx.Client(timeout=timeout_s)

    def translate(self, text: str, src: str, dst: str) -> str:
        attempts = 0
        while True:
            attempts += 1
            try:
                response = self._client.post(
                    f"{self.endpoint}/translate",
                    json={"text": text, "src": src, "dst": dst},
                    timeout=self.timeout_s,
                )
            except httpx.TimeoutException:
                if attempts < 2:
                    continue
                raise TranslationFailedError("timeout", attempts)
            if response.status_code != 200:
                raise TranslationFailedError("status", attempts, f"http {response.status_code}")
            try:
                body = response.json()
                translated = body["text"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TranslationFailedError("malformed", attempts, str(exc))
            if not isinstance(translated, str):
                raise TranslationFailedError("malformed", attempts, "text field is not a string")
            return translated

    def close(self) -> None:
        self._client.close()
