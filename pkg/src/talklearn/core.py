"""Shared domain model: participants, utterances, the per-participant stage
state machine, and timeline validation.

Stages partition each participant's session time. The machine is driven by
triggers (own speech start/end, remote speech end, presentation start/end,
learning prompt shown/done). A trigger that would *enter* a stage only applies
when the target stage outranks the current one; a trigger that *ends* a stage
only applies while that stage is current. Priority order, highest first:
Speaking > Viewing > Learning > Waiting > Idle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

# Timeline event kind names. The first five are the media/artifact kinds every
# completed bidirectional session produces; the rest are operational records.
ORIGINAL_MEDIA = "OriginalMedia"
TRANSCRIBED_TEXT = "TranscribedText"
TRANSLATED_TEXT = "TranslatedText"
TRANSLATED_SPEECH = "TranslatedSpeech"
SYNTHESIZED_VIDEO = "SynthesizedVideo"
STAGE_CHANGE = "StageChange"
VISIBILITY_CHANGE = "VisibilityChange"
LEARNING_ITEM_SHOWN = "LearningItemShown"
LEARNING_ANSWER = "LearningAnswer"
TRANSLATION_FAILED = "TranslationFailed"
QUESTIONNAIRE_RESPONSE = "QuestionnaireResponse"

MEDIA_EVENT_KINDS = (
    ORIGINAL_MEDIA,
    TRANSCRIBED_TEXT,
    TRANSLATED_TEXT,
    TRANSLATED_SPEECH,
    SYNTHESIZED_VIDEO,
)

EVENT_KINDS = frozenset(MEDIA_EVENT_KINDS) | {
    STAGE_CHANGE,
    VISIBILITY_CHANGE,
    LEARNING_ITEM_SHOWN,
    LEARNING_ANSWER,
    TRANSLATION_FAILED,
    QUESTIONNAIRE_RESPONSE,
}


class ConfigurationError(ValueError):
    """Invalid session or participant configuration."""


class TimingError(ValueError):
    """A timestamp moved backwards relative to recorded state."""


class Stage(Enum):
    SPEAKING = "Speaking"
    WAITING = "Waiting"
    VIEWING = "Viewing"
    LEARNING = "Learning"
    IDLE = "Idle"


STAGE_PRIORITY = {
    Stage.SPEAKING: 4,
    Stage.VIEWING: 3,
    Stage.LEARNING: 2,
    Stage.WAITING: 1,
    Stage.IDLE: 0,
}

# Stages that count as free time. Learning occupies free time, so window
# derivation treats it as free as well (see free-window helpers in delay_match).
FREE_STAGES = frozenset({Stage.WAITING, Stage.IDLE})
BUSY_STAGES = frozenset({Stage.SPEAKING, Stage.VIEWING})


class StageTrigger(Enum):
    UTTERANCE_START = "UtteranceStart"
    UTTERANCE_END = "UtteranceEnd"
    REMOTE_UTTERANCE_END = "RemoteUtteranceEnd"
    PRESENTATION_START = "PresentationStart"
    PRESENTATION_END = "PresentationEnd"
    LEARNING_SHOWN = "LearningShown"
    LEARNING_DONE = "LearningDone"


class VisibilityCause(Enum):
    SYNTHESIZED = "SynthesizedPresentation"
    MANUAL = "ManualOverride"


@dataclass(frozen=True)
class Participant:
    id: str
    native_language: str
    foreign_language: str
    visibility_override: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigurationError("participant id must be nonempty")
        if self.native_language == self.foreign_language:
            raise ConfigurationError(
                f"participant {self.id!r}: native and foreign language must differ"
            )


@dataclass(frozen=True)
class Utterance:
    """One captured message, timed in ms since session epoch."""

    id: str
    speaker: str
    language: str
    text: str
    capture_start: int
    capture_end: int
    translate_requested: bool = True
    practice: bool = False
    frame_energies: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"utterance {self.id!r}: text must be nonempty")
        if self.capture_start >= self.capture_end:
            raise ValueError(
                f"utterance {self.id!r}: capture_start must precede capture_end"
            )


@dataclass(frozen=True)
class StageInterval:
    participant: str
    stage: Stage
    t_start: int
    t_end: int


@dataclass(frozen=True)
class Visibility:
    participant: str
    visible: bool
    t_start: int
    t_end: int
    cause: VisibilityCause


@dataclass(frozen=True)
class SessionConfig:
    session_id: str
    participants: tuple[Participant, ...]

    def partner_of(self, participant_id: str) -> Participant:
        for p in self.participants:
            if p.id != participant_id:
                return p
        raise KeyError(participant_id)

    def get(self, participant_id: str) -> Participant:
        for p in self.participants:
            if p.id == participant_id:
                return p
        raise KeyError(participant_id)


class StageMachine:
    """Stage state for one participant, advanced trigger by trigger.

    Entering triggers apply only when the target outranks the current stage;
    ending triggers apply only while their stage is current. LEARNING_DONE
    restores the free stage that was current when the prompt appeared.
    """

    def __init__(self, participant_id: str, t0: int = 0) -> None:
        self.participant_id = participant_id
        self.stage = Stage.IDLE
        self.since = t0
        self._learning_resume = Stage.IDLE

    def advance(
        self, trigger: StageTrigger, t: int, pipeline_nonempty: bool
    ) -> StageInterval | None:
        """Apply a trigger at time t.

        Returns the interval closed by the transition, or None when the
        trigger was rejected, was a no-op, or closed a zero-length interval.
        The current stage is updated either way. Raises TimingError on time
        regression.
        """
        if t < self.since:
            raise TimingError(
                f"{self.participant_id}: trigger at {t} before stage start {self.since}"
            )
        target = self._target(trigger, pipeline_nonempty)
        if target is None or target == self.stage:
            return None
        if trigger is StageTrigger.LEARNING_SHOWN:
            self._learning_resume = self.stage
        closed = None
        if t > self.since:
            closed = StageInterval(self.participant_id, self.stage, self.since, t)
        self.stage = target
        self.since = t
        return closed

    def close(self, t: int) -> StageInterval | None:
        """Close the open interval at session end."""
        if t < self.since:
            raise TimingError(f"close at {t} before stage start {self.since}")
        if t == self.since:
            return None
        return StageInterval(self.participant_id, self.stage, self.since, t)

    def _target(self, trigger: StageTrigger, pipeline_nonempty: bool) -> Stage | None:
        free = Stage.WAITING if pipeline_nonempty else Stage.IDLE
        if trigger is StageTrigger.UTTERANCE_START:
            return Stage.SPEAKING
        if trigger is StageTrigger.UTTERANCE_END:
            return free if self.stage is Stage.SPEAKING else None
        if trigger is StageTrigger.REMOTE_UTTERANCE_END:
            return Stage.WAITING if self._outranks(Stage.WAITING) else None
        if trigger is StageTrigger.PRESENTATION_START:
            return Stage.VIEWING if self._outranks(Stage.VIEWING) else None
        if trigger is StageTrigger.PRESENTATION_END:
            return free if self.stage is Stage.VIEWING else None
        if trigger is StageTrigger.LEARNING_SHOWN:
            return Stage.LEARNING if self.stage in FREE_STAGES else None
        if trigger is StageTrigger.LEARNING_DONE:
            return self._learning_resume if self.stage is Stage.LEARNING else None
        raise ValueError(f"unknown trigger {trigger!r}")

    def _outranks(self, target: Stage) -> bool:
        return STAGE_PRIORITY[target] > STAGE_PRIORITY[self.stage]


@dataclass
class Session:
    """Mutable per-session state, owned by a single writer."""

    config: SessionConfig
    machines: dict[str, StageMachine] = field(default_factory=dict)
    overrides: dict[str, bool] = field(default_factory=dict)
    closed: bool = False
    session_end: int | None = None

    @property
    def participant_ids(self) -> list[str]:
        return [p.id for p in self.config.participants]


def advance_stage(
    session: Session,
    participant_id: str,
    trigger: StageTrigger,
    t: int,
    pipeline_nonempty: bool = False,
) -> StageInterval | None:
    """Apply a trigger to one participant's stage machine.

    Returns the interval the transition closed, or None when the trigger was
    rejected by priority or changed nothing.
    """
    if session.closed:
        raise ConfigurationError("session is closed")
    machine = session.machines.get(participant_id)
    if machine is None:
        raise ConfigurationError(f"unknown participant {participant_id!r}")
    return machine.advance(trigger, t, pipeline_nonempty)


def create_session(config: SessionConfig) -> Session:
    """Validate a two-party configuration and return a fresh session at t=0."""
    parts = config.participants
    if len(parts) != 2:
        raise ConfigurationError(f"sessions need exactly two participants, got {len(parts)}")
    a, b = parts
    if a.id == b.id:
        raise ConfigurationError(f"duplicate participant id {a.id!r}")
    if a.native_language != b.foreign_language or a.foreign_language != b.native_language:
        raise ConfigurationError(
            "participants must have complementary language pairs "
            f"({a.native_language}<->{a.foreign_language} vs "
            f"{b.native_language}<->{b.foreign_language})"
        )
    machines = {p.id: StageMachine(p.id) for p in parts}
    overrides = {p.id: p.visibility_override for p in parts}
    return Session(config=config, machines=machines, overrides=overrides)


# Processing ranks used to order simultaneous timeline actions. These mirror
# the session engine's queue ordering so that replaying a log reproduces the
# online stage decisions exactly. Ends sort before starts so that
# back-to-back captures and presentations chain without a gap.
RANK_CAPTURE_END = 0
RANK_CAPTURE_START = 1
RANK_TRANSLATION_DONE = 2
RANK_PRESENTATION_END = 3
RANK_PRESENTATION_START = 4
RANK_LEARNING_ANSWER = 5
RANK_PROMPT_DECISION = 6


def _replay_actions(events: Iterable) -> list[tuple]:
    """Extract (t, rank, participant, entity, action, data) tuples from a log."""
    actions = []
    for ev in events:
        if ev.kind == ORIGINAL_MEDIA:
            payload = ev.payload or {}
            actions.append(
                (ev.t_start, RANK_CAPTURE_START, ev.participant, ev.utt or "", "start", payload)
            )
            actions.append(
                (ev.t_end, RANK_CAPTURE_END, ev.participant, ev.utt or "", "end", payload)
            )
        elif ev.kind == SYNTHESIZED_VIDEO:
            actions.append(
                (ev.t_start, RANK_PRESENTATION_START, ev.participant, ev.utt or "", "pstart", {})
            )
            actions.append(
                (ev.t_end, RANK_PRESENTATION_END, ev.participant, ev.utt or "", "pend", {})
            )
        elif ev.kind == LEARNING_ITEM_SHOWN:
            actions.append(
                (ev.t_start, RANK_PROMPT_DECISION, ev.participant, ev.utt or "", "lshown", {})
            )
            actions.append(
                (ev.t_end, RANK_LEARNING_ANSWER, ev.participant, ev.utt or "", "ldone", {})
            )
    actions.sort(key=lambda a: a[:4])
    return actions


def stage_intervals(
    events: Iterable,
    participants: Sequence[str],
    session_end: int,
    include_learning: bool = True,
) -> dict[str, list[StageInterval]]:
    """Derive each participant's stage partition of [0, session_end] from a log.

    Pure replay of the transition table over the media and learning events;
    the result is independent of any StageChange records in the log. With
    include_learning=False, learning prompts are ignored, which yields the
    underlying free-time structure used for window detection.
    """
    if len(participants) != 2:
        raise ConfigurationError("stage replay requires exactly two participants")
    partner = {participants[0]: participants[1], participants[1]: participants[0]}
    machines = {pid: StageMachine(pid) for pid in participants}
    pipeline: dict[str, set[str]] = {pid: set() for pid in participants}
    out: dict[str, list[StageInterval]] = {pid: [] for pid in participants}

    def fire(pid: str, trigger: StageTrigger, t: int) -> None:
        closed = machines[pid].advance(trigger, t, bool(pipeline[pid]))
        if closed is not None:
            out[pid].append(closed)

    for t, rank, pid, entity, action, data in _replay_actions(events):
        if pid not in machines:
            raise ConfigurationError(f"event references unknown participant {pid!r}")
        if action == "start":
            fire(pid, StageTrigger.UTTERANCE_START, t)
        elif action == "end":
            other = partner[pid]
            if not data.get("practice", False):
                pipeline[other].add(entity)
            fire(pid, StageTrigger.UTTERANCE_END, t)
            if not data.get("practice", False):
                fire(other, StageTrigger.REMOTE_UTTERANCE_END, t)
        elif action == "pstart":
            pipeline[pid].discard(entity)
            fire(pid, StageTrigger.PRESENTATION_START, t)
        elif action == "pend":
            fire(pid, StageTrigger.PRESENTATION_END, t)
        elif action == "lshown" and include_learning:
            fire(pid, StageTrigger.LEARNING_SHOWN, t)
        elif action == "ldone" and include_learning:
            fire(pid, StageTrigger.LEARNING_DONE, t)

    for pid in participants:
        closed = machines[pid].close(session_end)
        if closed is not None:
            out[pid].append(closed)
        out[pid] = _merge_adjacent(out[pid])
    return out


def _merge_adjacent(intervals: list[StageInterval]) -> list[StageInterval]:
    merged: list[StageInterval] = []
    for iv in intervals:
        if merged and merged[-1].stage == iv.stage and merged[-1].t_end == iv.t_start:
            prev = merged.pop()
            iv = StageInterval(iv.participant, iv.stage, prev.t_start, iv.t_end)
        merged.append(iv)
    return merged


def validate_timeline(events: Sequence) -> list[str]:
    """Check a log for structural violations. Returns human-readable findings;
    an empty list means the log is well formed."""
    violations: list[str] = []
    last_seq = 0
    translated_end: dict[str, int] = {}
    capture_end: dict[str, int] = {}
    for ev in events:
        if ev.seq <= last_seq:
            violations.append(f"seq {ev.seq}: sequence numbers not strictly increasing")
        last_seq = max(last_seq, ev.seq)
        if ev.t_end < ev.t_start:
            violations.append(f"seq {ev.seq}: t_end {ev.t_end} precedes t_start {ev.t_start}")
        if ev.kind not in EVENT_KINDS:
            violations.append(f"seq {ev.seq}: unknown event kind {ev.kind!r}")
        if ev.kind == TRANSLATED_TEXT and ev.utt:
            translated_end[ev.utt] = ev.t_end
        if ev.kind == ORIGINAL_MEDIA and ev.utt:
            capture_end[ev.utt] = ev.t_end
        if ev.kind == SYNTHESIZED_VIDEO and ev.utt:
            if ev.utt in translated_end and ev.t_start < translated_end[ev.utt]:
                violations.append(
                    f"seq {ev.seq}: synthesized segment for {ev.utt} starts before "
                    "its translation completes"
                )
            if ev.utt in capture_end and ev.t_start < capture_end[ev.utt]:
                violations.append(
                    f"seq {ev.seq}: synthesized segment for {ev.utt} starts before "
                    "its capture ends"
                )

    # Stage records must agree with the replayed transition table.
    participants = sorted({ev.participant for ev in events if ev.participant})
    if len(participants) == 2 and not violations:
        session_end = max((ev.t_end for ev in events), default=0)
        replayed = stage_intervals(events, participants, session_end)
        for iv_list in replayed.values():
            for a, b in zip(iv_list, iv_list[1:]):
                if a.t_end > b.t_start:
                    violations.append(
                        f"stage overlap for {a.participant}: "
                        f"{a.stage.value}[{a.t_start},{a.t_end}] vs "
                        f"{b.stage.value}[{b.t_start},{b.t_end}]"
                    )
        # Transient same-instant transitions leave no interval, so only the
        # last stage claimed at each (participant, t) is checkable.
        last_claim: dict[tuple[str, int], tuple[int, str]] = {}
        for ev in events:
            if ev.kind != STAGE_CHANGE or ev.payload.get("trigger") == "SessionClose":
                continue
            last_claim[(ev.participant, ev.t_start)] = (ev.seq, ev.payload.get("stage"))
        for (pid, t), (seq, claimed) in last_claim.items():
            actual = None
            for iv in replayed.get(pid, []):
                if iv.t_start == t or iv.t_start < t < iv.t_end:
                    actual = iv.stage.value
                    break
            if actual is not None and claimed != actual:
                violations.append(
                    f"seq {seq}: recorded stage {claimed} at t={t} disagrees "
                    f"with replayed stage {actual}"
                )
    return violations
