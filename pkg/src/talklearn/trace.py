"""Session traces: scripted conversations fed to the simulator or replayed
through scripted wire clients. JSON on disk, validated on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import Participant
from .delay_match import detect_activity
from .translation import synthesize_speech


class TraceError(ValueError):
    """Trace fails validation."""


@dataclass(frozen=True)
class UtteranceSpec:
    speaker: str
    t: int
    text: str
    translate: bool = True
    practice: bool = False
    id: str | None = None
    duration_ms: int | None = None
    frame_energies: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Trace:
    session_id: str
    participants: tuple[Participant, ...]
    utterances: tuple[UtteranceSpec, ...]
    keywords: tuple[str, ...] = ()
    lexicon_entries: dict | None = None
    lexicon_pair: tuple[str, str] | None = None
    session_end_ms: int | None = None

    def validate(self) -> None:
        ids = {p.id for p in self.participants}
        if len(self.participants) != 2 or len(ids) != 2:
            raise TraceError("trace must name exactly two distinct participants")
        last_t: dict[str, int] = {}
        seen_ids: set[str] = set()
        for index, spec in enumerate(self.utterances):
            if spec.speaker not in ids:
                raise TraceError(f"utterance {index}: unknown speaker {spec.speaker!r}")
            if spec.t < 0:
                raise TraceError(f"utterance {index}: negative start time")
            if not spec.text.strip():
                raise TraceError(f"utterance {index}: empty text")
            if spec.speaker in last_t and spec.t < last_t[spec.speaker]:
                raise TraceError(
                    f"utterance {index}: speaker {spec.speaker!r} start times must be nondecreasing"
                )
            last_t[spec.speaker] = spec.t
            if spec.id is not None:
                if spec.id in seen_ids:
                    raise TraceError(f"utterance {index}: duplicate id {spec.id!r}")
                seen_ids.add(spec.id)


def resolve_duration(
    spec: UtteranceSpec,
    rate_ms_per_char: int = 60,
    vad_threshold: float = 0.1,
    vad_min_frames: int = 3,
    vad_hangover_frames: int = 5,
    vad_frame_period_ms: int = 20,
) -> int:
    """Capture duration for a trace utterance.

    Explicit duration wins; otherwise frame energies are segmented and the
    last detected activity bounds the clip; otherwise the text length
    estimates it.
    """
    if spec.duration_ms is not None:
        if spec.duration_ms <= 0:
            raise TraceError(f"utterance {spec.id or spec.text!r}: duration must be positive")
        return spec.duration_ms
    if spec.frame_energies:
        intervals = detect_activity(
            list(spec.frame_energies),
            threshold=vad_threshold,
            min_frames=vad_min_frames,
            hangover_frames=vad_hangover_frames,
            frame_period_ms=vad_frame_period_ms,
        )
        if intervals:
            return intervals[-1][1]
    return synthesize_speech(spec.text, rate_ms_per_char)


def trace_from_dict(data: dict) -> Trace:
    try:
        participants = tuple(
            Participant(
                id=p["id"],
                native_language=p["native_language"],
                foreign_language=p["foreign_language"],
            )
            for p in data["participants"]
        )
        utterances = tuple(
            UtteranceSpec(
                speaker=u["speaker"],
                t=u["t"],
                text=u["text"],
                translate=u.get("translate", True),
                practice=u.get("practice", False),
                id=u.get("id"),
                duration_ms=u.get("duration_ms"),
                frame_energies=tuple(u["frame_energies"]) if u.get("frame_energies") else None,
            )
            for u in data["utterances"]
        )
    except (KeyError, TypeError) as exc:
        raise TraceError(f"malformed trace: {exc}") from exc
    lexicon = data.get("lexicon")
    entries = pair = None
    if isinstance(lexicon, dict):
        entries = lexicon.get("entries")
        if "src" in lexicon and "dst" in lexicon:
            pair = (lexicon["src"], lexicon["dst"])
    trace = Trace(
        session_id=data.get("session_id", "session"),
        participants=participants,
        utterances=utterances,
        keywords=tuple(data.get("keywords", ())),
        lexicon_entries=entries,
        lexicon_pair=pair,
        session_end_ms=data.get("session_end_ms"),
    )
    trace.validate()
    return trace


def trace_to_dict(trace: Trace) -> dict:
    data: dict = {
        "session_id": trace.session_id,
        "participants": [
            {
                "id": p.id,
                "native_language": p.native_language,
                "foreign_language": p.foreign_language,
            }
            for p in trace.participants
        ],
        "keywords": list(trace.keywords),
        "utterances": [],
    }
    if trace.session_end_ms is not None:
        data["session_end_ms"] = trace.session_end_ms
    if trace.lexicon_entries is not None:
        lex: dict = {"entries": trace.lexicon_entries}
        if trace.lexicon_pair:
            lex["src"], lex["dst"] = trace.lexicon_pair
        data["lexicon"] = lex
    for u in trace.utterances:
        entry: dict = {"speaker": u.speaker, "t": u.t, "text": u.text}
        if u.id is not None:
            entry["id"] = u.id
        if not u.translate:
            entry["translate"] = False
        if u.practice:
            entry["practice"] = True
        if u.duration_ms is not None:
            entry["duration_ms"] = u.duration_ms
        if u.frame_energies is not None:
            entry["frame_energies"] = list(u.frame_energies)
        data["utterances"].append(entry)
    return data


def load_trace(path: str) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return trace_from_dict(json.load(fh))
