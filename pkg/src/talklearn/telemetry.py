"""Append-only session timeline, JSON Lines persistence, and derived metrics.

Log files are one JSON object per line, UTF-8, with keys in a fixed order so
identical sessions serialize to identical bytes:
seq, session, kind, participant, utt, t_start, t_end, payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import core
from .core import (
    EVENT_KINDS,
    LEARNING_ANSWER,
    ORIGINAL_MEDIA,
    QUESTIONNAIRE_RESPONSE,
    TRANSLATED_TEXT,
    Stage,
)

SOURCE_MACHINE = "Machine"
SOURCE_NONE = "None"

_FIELD_ORDER = ("seq", "session", "kind", "participant", "utt", "t_start", "t_end", "payload")


class LogError(ValueError):
    """Invalid append or state transition on a session log."""


class LogParseError(LogError):
    def __init__(self, line_number: int, message: str) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class TimelineEvent:
    seq: int
    session: str
    kind: str
    participant: str | None
    utt: str | None
    t_start: int
    t_end: int
    payload: dict


@dataclass(frozen=True)
class QuestionnaireRecord:
    participant: str
    answers: tuple[tuple[str, int], ...]
    free_text: str | None = None

    def __post_init__(self) -> None:
        for qid, likert in self.answers:
            if not 1 <= likert <= 5:
                raise ValueError(f"question {qid!r}: likert value {likert} outside 1..5")


class SessionLog:
    """Append-only event log for one session. Single writer; events are
    immutable once appended."""

    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        self.events: list[TimelineEvent] = []
        self.closed = False
        self.session_end: int | None = None
        self._pending_questionnaires: list[QuestionnaireRecord] = []

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SessionLog):
            return NotImplemented
        return self.session_id == other.session_id and self.events == other.events

    def append(
        self,
        kind: str,
        participant: str | None,
        utt: str | None,
        t_start: int,
        t_end: int,
        payload: dict | None = None,
    ) -> int:
        """Append an event and return its assigned sequence number."""
        if self.closed:
            raise LogError("session log is closed")
        if kind not in EVENT_KINDS:
            raise LogError(f"unknown event kind {kind!r}")
        if t_end < t_start:
            raise LogError(f"t_end {t_end} precedes t_start {t_start}")
        if t_start < 0:
            raise LogError(f"t_start {t_start} before session epoch")
        seq = len(self.events) + 1
        self.events.append(
            TimelineEvent(seq, self.session_id, kind, participant, utt, t_start, t_end, payload or {})
        )
        return seq

    def record_questionnaire(self, record: QuestionnaireRecord) -> None:
        """Hold a questionnaire for persistence at session close time."""
        if self.closed:
            raise LogError("session log is closed")
        self._pending_questionnaires.append(record)

    def close(self, session_end: int) -> None:
        if self.closed:
            raise LogError("session log already closed")
        for rec in self._pending_questionnaires:
            self.append(
                QUESTIONNAIRE_RESPONSE,
                rec.participant,
                None,
                session_end,
                session_end,
                {
                    "answers": [{"question_id": q, "likert": v} for q, v in rec.answers],
                    "free_text": rec.free_text,
                },
            )
        self._pending_questionnaires = []
        self.session_end = session_end
        self.closed = True

    @property
    def participants(self) -> list[str]:
        return sorted({ev.participant for ev in self.events if ev.participant})


def serialize_log(log: SessionLog) -> bytes:
    """Render a log as JSON Lines, one event per line, fixed key order."""
    lines = []
    for ev in log.events:
        record = {
            "seq": ev.seq,
            "session": ev.session,
            "kind": ev.kind,
            "participant": ev.participant,
            "utt": ev.utt,
            "t_start": ev.t_start,
            "t_end": ev.t_end,
            "payload": ev.payload,
        }
        lines.append(json.dumps(record, ensure_ascii=False, separators=(",", ":")))
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def parse_log(data: bytes | str) -> SessionLog:
    """Parse JSON Lines back into a session log.

    The parsed log is closed, with session_end recovered from the latest
    event end. Malformed input raises LogParseError naming the line.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    log = SessionLog("")
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogParseError(lineno, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise LogParseError(lineno, "event must be a JSON object")
        missing = [k for k in _FIELD_ORDER if k not in record]
        if missing:
            raise LogParseError(lineno, f"missing fields: {', '.join(missing)}")
        if record["kind"] not in EVENT_KINDS:
            raise LogParseError(lineno, f"unknown event kind {record['kind']!r}")
        if not log.session_id:
            log.session_id = record["session"]
        log.events.append(
            TimelineEvent(
                seq=record["seq"],
                session=record["session"],
                kind=record["kind"],
                participant=record["participant"],
                utt=record["utt"],
                t_start=record["t_start"],
                t_end=record["t_end"],
                payload=record["payload"] or {},
            )
        )
    log.session_end = max((ev.t_end for ev in log.events), default=0)
    log.closed = True
    return log


def load_log(path: str) -> SessionLog:
    with open(path, "rb") as fh:
        return parse_log(fh.read())


def write_log(log: SessionLog, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_log(log))


@dataclass(frozen=True)
class SessionMetrics:
    participant: str
    messages_sent: int
    untranslated_pct: float
    machine_pct: float
    stage_durations: dict[str, int]
    free_time_ms: int
    learning_items_attempted: int
    learning_accuracy: float
    discount_ratio: float

    def as_dict(self) -> dict:
        return {
            "participant": self.participant,
            "messages_sent": self.messages_sent,
            "untranslated_pct": self.untranslated_pct,
            "machine_pct": self.machine_pct,
            "stage_durations": dict(self.stage_durations),
            "free_time_ms": self.free_time_ms,
            "learning_items_attempted": self.learning_items_attempted,
            "learning_accuracy": self.learning_accuracy,
            "discount_ratio": self.discount_ratio,
        }


def _pct(numerator: int, denominator: int) -> float:
    if denominator == 0:
        return 0.0
    return round(100.0 * numerator / denominator, 1)


def compute_metrics(
    log: SessionLog,
    participant: str,
    discount_factor: float = 0.5,
    discount_cap: float = 0.3,
) -> SessionMetrics:
    """Derive a participant's session metrics from the raw event log.

    Practice utterances are excluded from message counts and percentage
    denominators; they were never delivered. The discount ratio rewards
    correctly phrased untranslated messages:
    min(discount_factor * correct_untranslated / sent, discount_cap).
    """
    sent = 0
    untranslated = 0
    untranslated_correct = 0
    machine_utts: set[str] = set()
    for ev in log.events:
        if ev.kind == ORIGINAL_MEDIA and ev.participant == participant:
            if ev.payload.get("practice"):
                continue
            sent += 1
            if not ev.payload.get("translate_requested", True):
                untranslated += 1
        elif ev.kind == TRANSLATED_TEXT and ev.participant == participant:
            if ev.payload.get("source") == SOURCE_MACHINE and ev.utt:
                machine_utts.add(ev.utt)
        elif (
            ev.kind == core.TRANSCRIBED_TEXT
            and ev.participant == participant
            and ev.payload.get("foreign_correct")
        ):
            untranslated_correct += 1

    attempted = 0
    correct_answers = 0
    for ev in log.events:
        if ev.kind == LEARNING_ANSWER and ev.participant == participant:
            if ev.payload.get("scored"):
                attempted += 1
                if ev.payload.get("correct"):
                    correct_answers += 1

    session_end = log.session_end if log.session_end is not None else max(
        (ev.t_end for ev in log.events), default=0
    )
    participants = log.participants
    durations = {stage.value: 0 for stage in Stage}
    if len(participants) == 2 and session_end > 0:
        intervals = core.stage_intervals(log.events, participants, session_end)
        for iv in intervals.get(participant, []):
            durations[iv.stage.value] += iv.t_end - iv.t_start
    elif session_end > 0 and participant:
        durations[Stage.IDLE.value] = session_end
    free_ms = durations[Stage.WAITING.value] + durations[Stage.IDLE.value]

    discount = 0.0
    if sent:
        discount = min(discount_factor * untranslated_correct / sent, discount_cap)
    accuracy = round(correct_answers / attempted, 4) if attempted else 0.0

    return SessionMetrics(
        participant=participant,
        messages_sent=sent,
        untranslated_pct=_pct(untranslated, sent),
        machine_pct=_pct(len(machine_utts), sent),
        stage_durations=durations,
        free_time_ms=free_ms,
        learning_items_attempted=attempted,
        learning_accuracy=accuracy,
        discount_ratio=round(discount, 4),
    )


def render_metrics_table(metrics: list[SessionMetrics]) -> str:
    """Plain-text metrics report, one column per participant."""
    if not metrics:
        return "(no participants)"
    rows = [
        ("messages sent", lambda m: str(m.messages_sent)),
        ("untranslated %", lambda m: f"{m.untranslated_pct:.1f}"),
        ("machine-translated %", lambda m: f"{m.machine_pct:.1f}"),
        ("free time (ms)", lambda m: str(m.free_time_ms)),
        ("learning attempts", lambda m: str(m.learning_items_attempted)),
        ("learning accuracy", lambda m: f"{m.learning_accuracy:.2f}"),
        ("discount ratio", lambda m: f"{m.discount_ratio:.3f}"),
    ]
    for stage in Stage:
        rows.append(
            (f"{stage.value.lower()} (ms)", lambda m, s=stage: str(m.stage_durations[s.value]))
        )
    width = max(len(label) for label, _ in rows)
    head = " " * (width + 2) + "  ".join(f"{m.participant:>14}" for m in metrics)
    lines = [head]
    for label, fn in rows:
        lines.append(f"{label:<{width}}  " + "  ".join(f"{fn(m):>14}" for m in metrics))
    return "\n".join(lines)
