"""The delay-match pipeline: buffer original media, align it with translation
results into synthesized segments, schedule presentations, detect speech
activity, and derive free-time windows from stage partitions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import FREE_STAGES, Stage, StageInterval, Utterance
from .translation import TranslationResult


class AlignmentPolicy(Enum):
    FREEZE_PAD = "FreezePad"
    TRIM = "Trim"


class SegmentKind(Enum):
    VIDEO = "Video"
    AUDIO = "Audio"


class BufferError(ValueError):
    """Segment cannot be accepted into the delay buffer."""


class AlignmentError(ValueError):
    """Segments and translation cannot be combined."""


class ScheduleError(ValueError):
    """Segment cannot be scheduled for presentation."""


@dataclass(frozen=True)
class MediaSegment:
    utterance_id: str
    kind: SegmentKind
    duration_ms: int
    payload_ref: str
    checksum: str

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise ValueError(f"segment for {self.utterance_id!r}: duration must be positive")


@dataclass
class SynthesizedSegment:
    """Delayed media aligned with its translated caption and speech."""

    utterance_id: str
    speaker: str
    receiver: str
    caption_text: str
    speech_duration_ms: int
    video_duration_ms: int
    final_duration_ms: int
    pad_applied_ms: int
    policy: AlignmentPolicy
    ready_time: int
    capture_start: int
    capture_end: int
    presentation_start: int | None = None
    presentation_end: int | None = None


@dataclass(frozen=True)
class FreeWindow:
    participant: str
    t_start: int
    t_end: int

    @property
    def length_ms(self) -> int:
        return self.t_end - self.t_start


class SegmentBuffer:
    """Holds original media keyed by utterance until translation catches up.

    Nothing leaves the buffer toward the partner; alignment consumes it.
    """

    def __init__(self) -> None:
        self._known: dict[str, Utterance] = {}
        self._segments: dict[tuple[str, SegmentKind], MediaSegment] = {}

    def register(self, utterance: Utterance) -> None:
        self._known[utterance.id] = utterance

    def ingest(self, segment: MediaSegment) -> None:
        if segment.utterance_id not in self._known:
            raise BufferError(f"unknown utterance {segment.utterance_id!r}")
        key = (segment.utterance_id, segment.kind)
        if key in self._segments:
            raise BufferError(
                f"duplicate {segment.kind.value} segment for {segment.utterance_id!r}"
            )
        self._segments[key] = segment

    def get(self, utterance_id: str, kind: SegmentKind) -> MediaSegment | None:
        return self._segments.get((utterance_id, kind))

    def segments_for(self, utterance_id: str) -> dict[SegmentKind, MediaSegment]:
        return {
            kind: seg
            for (uid, kind), seg in self._segments.items()
            if uid == utterance_id
        }

    def __len__(self) -> int:
        return len(self._segments)


def align(
    utterance: Utterance,
    segments: dict[SegmentKind, MediaSegment],
    translation: TranslationResult,
    policy: AlignmentPolicy = AlignmentPolicy.FREEZE_PAD,
    receiver: str = "",
) -> SynthesizedSegment:
    """Combine buffered media with a finished translation.

    The caption is the whole translated text, attached as one batch for the
    full segment. FreezePad holds the last frame until the replacement
    speech ends; Trim cuts to the shorter of the two.
    """
    if SegmentKind.VIDEO not in segments or SegmentKind.AUDIO not in segments:
        missing = [k.value for k in SegmentKind if k not in segments]
        raise AlignmentError(f"utterance {utterance.id!r}: missing {', '.join(missing)} segment")
    if not translation.translated_text:
        raise AlignmentError(f"utterance {utterance.id!r}: empty translated text")
    video_ms = segments[SegmentKind.VIDEO].duration_ms
    speech_ms = translation.speech_duration_ms
    if policy is AlignmentPolicy.FREEZE_PAD:
        final_ms = max(video_ms, speech_ms)
        pad_ms = final_ms - video_ms
    else:
        final_ms = min(video_ms, speech_ms)
        pad_ms = 0
    return SynthesizedSegment(
        utterance_id=utterance.id,
        speaker=utterance.speaker,
        receiver=receiver,
        caption_text=translation.translated_text,
        speech_duration_ms=speech_ms,
        video_duration_ms=video_ms,
        final_duration_ms=final_ms,
        pad_applied_ms=pad_ms,
        policy=policy,
        ready_time=translation.t_completed,
        capture_start=utterance.capture_start,
        capture_end=utterance.capture_end,
    )


class PresentationScheduler:
    """Orders synthesized segments for one receiver.

    Presentations never overlap; each speaker's segments play in capture
    order even when translations finish out of order; across speakers,
    ready time wins, with ties broken by capture start then speaker id.
    """

    def __init__(self) -> None:
        self.last_end = 0
        self._next_index: dict[str, int] = {}
        self._arrived: dict[str, dict[int, SynthesizedSegment]] = {}
        self._counters: dict[str, int] = {}
        self._capture_order: dict[str, int] = {}

    def register_capture(self, speaker: str, utterance_id: str) -> None:
        """Record capture order; call once per utterance, in capture order."""
        index = self._counters.get(speaker, 0)
        self._counters[speaker] = index + 1
        self._capture_order[utterance_id] = index

    def offer(self, synth: SynthesizedSegment, practice: bool = False) -> list[SynthesizedSegment]:
        """Admit a ready segment; returns every segment that became scheduled,
        in presentation order."""
        if practice:
            raise ScheduleError(
                f"utterance {synth.utterance_id!r} is a practice utterance and is never presented"
            )
        if synth.utterance_id not in self._capture_order:
            self.register_capture(synth.speaker, synth.utterance_id)
        index = self._capture_order[synth.utterance_id]
        self._arrived.setdefault(synth.speaker, {})[index] = synth
        return self._flush()

    def _flush(self) -> list[SynthesizedSegment]:
        scheduled: list[SynthesizedSegment] = []
        while True:
            heads = []
            for speaker, pending in self._arrived.items():
                nxt = self._next_index.get(speaker, 0)
                if nxt in pending:
                    heads.append(pending[nxt])
            if not heads:
                return scheduled
            heads.sort(key=lambda s: (s.ready_time, s.capture_start, s.speaker))
            synth = heads[0]
            start = max(synth.ready_time, self.last_end)
            synth.presentation_start = start
            synth.presentation_end = start + synth.final_duration_ms
            self.last_end = synth.presentation_end
            idx = self._next_index.get(synth.speaker, 0)
            self._next_index[synth.speaker] = idx + 1
            del self._arrived[synth.speaker][idx]
            scheduled.append(synth)


def schedule_presentation(
    scheduler: PresentationScheduler, synth: SynthesizedSegment, practice: bool = False
) -> list[SynthesizedSegment]:
    """Functional entry point over PresentationScheduler.offer."""
    return scheduler.offer(synth, practice=practice)


def detect_activity(
    frame_energies: list[float] | tuple[float, ...],
    threshold: float = 0.1,
    min_frames: int = 3,
    hangover_frames: int = 5,
    frame_period_ms: int = 20,
) -> list[tuple[int, int]]:
    """Energy-threshold speech segmentation over per-frame energies.

    A run of at least min_frames consecutive frames at or above the
    threshold counts as speech. Runs whose hangover-extended spans touch
    are merged into one interval; intervals are then trimmed back to actual
    activity, so the detector is idempotent on its own output's indicator.
    Returns (start_ms, end_ms) pairs.
    """
    runs: list[list[int]] = []  # [start, end) frame indices
    start = None
    for i, energy in enumerate(frame_energies):
        if energy >= threshold:
            if start is None:
                start = i
        else:
            if start is not None and i - start >= min_frames:
                runs.append([start, i])
            start = None
    if start is not None and len(frame_energies) - start >= min_frames:
        runs.append([start, len(frame_energies)])
    if not runs:
        return []

    merged: list[list[int]] = []
    for run_start, run_end in runs:
        extended_end = run_end + hangover_frames
        if merged and run_start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], extended_end)
            merged[-1][2] = run_end
        else:
            merged.append([run_start, extended_end, run_end])
    return [(s * frame_period_ms, last_active * frame_period_ms) for s, _, last_active in merged]


def free_windows(
    intervals: list[StageInterval], min_window_ms: int = 3000
) -> list[FreeWindow]:
    """Maximal spans of consecutive free-time intervals of one participant.

    Waiting and Idle are free; Learning occupies free time and so keeps a
    span unbroken. Spans shorter than min_window_ms are dropped.
    """
    free_like = FREE_STAGES | {Stage.LEARNING}
    windows: list[FreeWindow] = []
    span: tuple[str, int, int] | None = None

    def flush() -> None:
        if span is not None and span[2] - span[1] >= min_window_ms:
            windows.append(FreeWindow(*span))

    for iv in sorted(intervals, key=lambda i: i.t_start):
        if iv.stage in free_like:
            if span is not None and iv.t_start == span[2]:
                span = (span[0], span[1], iv.t_end)
            else:
                flush()
                span = (iv.participant, iv.t_start, iv.t_end)
        else:
            flush()
            span = None
    flush()
    return windows
