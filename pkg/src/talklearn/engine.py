"""Deterministic session engine and discrete-event simulator.

One engine instance owns all state of one session. External inputs (utterance
captures, answers, override toggles) are pushed into a priority queue keyed by
(time, rank, participant, entity); internal consequences (translation
completions, presentations, learning prompts) are queued the same way, so the
processed order is a pure function of the inputs. The simulator pushes a whole
trace and drains to completion; the live server pushes wire messages as they
arrive and drains up to the latest client timestamp, which makes a
virtual-clocked served session reproduce the simulator's log exactly.

Learning prompts are issued causally: only once a participant has been
continuously free for the configured minimum window, and only when the item
fits before every already-known busy time. A surprise interruption truncates
the prompt at the stage boundary, so prompts never overlap speaking or
viewing time and always sit inside a qualifying free window.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
import time
from dataclasses import dataclass, field
from typing import Any

from .core import (
    BUSY_STAGES,
    FREE_STAGES,
    LEARNING_ANSWER,
    LEARNING_ITEM_SHOWN,
    ORIGINAL_MEDIA,
    RANK_CAPTURE_END,
    RANK_CAPTURE_START,
    RANK_LEARNING_ANSWER,
    RANK_PRESENTATION_END,
    RANK_PRESENTATION_START,
    RANK_PROMPT_DECISION,
    RANK_TRANSLATION_DONE,
    STAGE_CHANGE,
    SYNTHESIZED_VIDEO,
    TRANSCRIBED_TEXT,
    TRANSLATED_SPEECH,
    TRANSLATED_TEXT,
    TRANSLATION_FAILED,
    Session,
    SessionConfig,
    Stage,
    StageTrigger,
    TimingError,
    Utterance,
    VISIBILITY_CHANGE,
    VisibilityCause,
    create_session,
)
from .delay_match import (
    AlignmentPolicy,
    MediaSegment,
    PresentationScheduler,
    SegmentBuffer,
    SegmentKind,
    SynthesizedSegment,
    align,
)
from .learning import (
    DIRECTION_RECEIVED,
    DIRECTION_SENT,
    KIND_REVIEW,
    LearningItem,
    estimate_exercise_ms,
    grade_answer,
    normalize,
    pick_item,
    update_box,
)
from .telemetry import SOURCE_MACHINE, SessionLog, compute_metrics
from .trace import Trace, TraceError, resolve_duration
from .translation import (
    LatencyModel,
    Lexicon,
    MockTranslator,
    RemoteTranslator,
    TranslationFailedError,
    TranslationResult,
    covered,
    passthrough_result,
    synthesize_speech,
)

RANK_OVERRIDE = 8

# Wire message types.
MSG_JOIN = "Join"
MSG_UTTERANCE_START = "UtteranceStart"
MSG_UTTERANCE_END = "UtteranceEnd"
MSG_CAPTION = "Caption"
MSG_SYNTH_START = "SynthesizedStart"
MSG_SYNTH_END = "SynthesizedEnd"
MSG_STAGE_UPDATE = "StageUpdate"
MSG_VISIBILITY_UPDATE = "VisibilityUpdate"
MSG_AUX_PICTURE = "AuxiliaryPicture"
MSG_LEARNING_PROMPT = "LearningPrompt"
MSG_LEARNING_ANSWER = "LearningAnswer"
MSG_METRICS_SNAPSHOT = "MetricsSnapshot"
MSG_ERROR = "Error"

AUX_NONE = "none"
AUX_REMOTE_SPEAKING = "remote_speaking"
AUX_TRANSLATING = "translating"


class EngineError(ValueError):
    """Client input the engine cannot accept."""


@dataclass(frozen=True)
class WireMessage:
    """One framed protocol message. `to` routes it and is not serialized."""

    type: str
    session_id: str
    t: int
    payload: dict
    to: str | None = None

    def as_dict(self) -> dict:
        return {
            "type": self.type,
            "session_id": self.session_id,
            "t": self.t,
            "payload": self.payload,
        }


@dataclass
class SimulationConfig:
    seed: int = 0
    latency: LatencyModel = field(default_factory=LatencyModel)
    policy: AlignmentPolicy = AlignmentPolicy.FREEZE_PAD
    min_window_ms: int = 3000
    rate_ms_per_char: int = 60
    answer_allowance_ms: int = 2000
    correct_threshold: float = 0.8
    learner_accuracy: float = 0.7
    vad_threshold: float = 0.1
    vad_min_frames: int = 3
    vad_hangover_frames: int = 5
    vad_frame_period_ms: int = 20
    discount_factor: float = 0.5
    discount_cap: float = 0.3

    @classmethod
    def from_mapping(cls, data: dict) -> "SimulationConfig":
        cfg = cls()
        translation = data.get("translation", {})
        latency = translation.get("latency", {})
        cfg.latency = LatencyModel(
            base_ms=latency.get("base_ms", cfg.latency.base_ms),
            per_char_ms=latency.get("per_char_ms", cfg.latency.per_char_ms),
            jitter_ms=latency.get("jitter_ms", cfg.latency.jitter_ms),
        )
        cfg.rate_ms_per_char = translation.get("rate_ms_per_char", cfg.rate_ms_per_char)
        dm = data.get("delay_match", {})
        cfg.policy = AlignmentPolicy(dm.get("policy", cfg.policy.value))
        cfg.min_window_ms = dm.get("min_window_ms", cfg.min_window_ms)
        vad = dm.get("vad", {})
        cfg.vad_threshold = vad.get("threshold", cfg.vad_threshold)
        cfg.vad_min_frames = vad.get("min_frames", cfg.vad_min_frames)
        cfg.vad_hangover_frames = vad.get("hangover_frames", cfg.vad_hangover_frames)
        cfg.vad_frame_period_ms = vad.get("frame_period_ms", cfg.vad_frame_period_ms)
        learning = data.get("learning", {})
        cfg.correct_threshold = learning.get("correct_threshold", cfg.correct_threshold)
        cfg.answer_allowance_ms = learning.get("answer_allowance_ms", cfg.answer_allowance_ms)
        cfg.learner_accuracy = learning.get("learner_accuracy", cfg.learner_accuracy)
        cfg.discount_factor = learning.get("discount_factor", cfg.discount_factor)
        cfg.discount_cap = learning.get("discount_cap", cfg.discount_cap)
        cfg.seed = data.get("seed", cfg.seed)
        return cfg


@dataclass
class _KnownCapture:
    utterance_id: str
    cs: int
    ce: int | None = None


@dataclass
class _ActivePrompt:
    item: LearningItem
    shown_at: int


class SessionEngine:
    """Single-writer owner of one session's state.

    auto_answer makes the engine play the learner (simulation and scripted
    sessions). strict gates event processing at the latest client timestamp
    so that a virtual-clocked session replays deterministically; wall-clock
    sessions instead drain up to the current time.
    """

    def __init__(
        self,
        session: Session,
        config: SimulationConfig,
        lexicon: Lexicon,
        log: SessionLog,
        auto_answer: bool = True,
        strict: bool = True,
        backend: RemoteTranslator | None = None,
    ) -> None:
        self.session = session
        self.config = config
        self.lexicon = lexicon
        self.log = log
        self.auto_answer = auto_answer
        self.strict = strict
        self.backend = backend
        self.translator = MockTranslator(lexicon, config.rate_ms_per_char, config.latency)

        pids = session.participant_ids
        self._partner = {pids[0]: pids[1], pids[1]: pids[0]}
        self._queue: list = []
        self._counter = 0
        self._horizon: float = 0
        self._buffer = SegmentBuffer()
        self._scheduler = {pid: PresentationScheduler() for pid in pids}
        # Utterances a participant is waiting for: dispatched, presentation
        # not yet started. Values are completion times (None when a remote
        # backend has not answered yet).
        self._pipeline: dict[str, dict[str, int | None]] = {pid: {} for pid in pids}
        self._pending_ps: dict[str, list[tuple[int, str]]] = {pid: [] for pid in pids}
        self._items: dict[str, list[LearningItem]] = {pid: [] for pid in pids}
        self._item_keys: dict[str, set] = {pid: set() for pid in pids}
        self._item_count = {pid: 0 for pid in pids}
        self._free_run = {pid: 0 for pid in pids}
        self._active_prompt: dict[str, _ActivePrompt | None] = {pid: None for pid in pids}
        self._viewing: dict[str, SynthesizedSegment | None] = {pid: None for pid in pids}
        self._aux = {pid: AUX_NONE for pid in pids}
        self._vis_sources: dict[str, set[str]] = {pid: set() for pid in pids}
        self._vis_cause: dict[str, VisibilityCause | None] = {pid: None for pid in pids}
        self._vis_since = {pid: 0 for pid in pids}
        self._started: dict[str, list[_KnownCapture]] = {pid: [] for pid in pids}
        self._utts: dict[str, Utterance] = {}
        self._rng_latency = random.Random(f"{config.seed}:latency")
        self._rng_learner = random.Random(f"{config.seed}:learner")
        self._outbox: list[WireMessage] = []
        self._last_event_t = 0
        self._max_stamp = 0
        # The initial idle period counts as an established-from-epoch run.
        for pid in pids:
            self._push(self.config.min_window_ms, RANK_PROMPT_DECISION, pid, "", "prompt_decision", None)

    # ------------------------------------------------------------------
    # external inputs

    def add_utterance(self, utt: Utterance) -> None:
        """Queue a fully known capture (simulator path)."""
        self._require_open()
        if utt.speaker not in self._partner:
            raise EngineError(f"unknown speaker {utt.speaker!r}")
        if utt.id in self._utts:
            raise EngineError(f"duplicate utterance id {utt.id!r}")
        self._utts[utt.id] = utt
        self._buffer.register(utt)
        self._push(utt.capture_start, RANK_CAPTURE_START, utt.speaker, utt.id, "capture_start", None)
        self._push(utt.capture_end, RANK_CAPTURE_END, utt.speaker, utt.id, "capture_end", None)
        self._max_stamp = max(self._max_stamp, utt.capture_end)

    def begin_utterance(self, speaker: str, utterance_id: str, t: int) -> None:
        """Live path: a capture started; details arrive with its end."""
        self._require_open()
        if speaker not in self._partner:
            raise EngineError(f"unknown speaker {speaker!r}")
        if utterance_id in self._utts or any(
            k.utterance_id == utterance_id for k in self._started[speaker]
        ):
            raise EngineError(f"duplicate utterance id {utterance_id!r}")
        self._started[speaker].append(_KnownCapture(utterance_id, t))
        self._push(t, RANK_CAPTURE_START, speaker, utterance_id, "capture_start", None)

    def end_utterance(self, utt: Utterance) -> None:
        """Live path: complete a previously started capture."""
        self._require_open()
        entry = next(
            (k for k in self._started[utt.speaker] if k.utterance_id == utt.id and k.ce is None),
            None,
        )
        if entry is None:
            raise EngineError(f"utterance {utt.id!r} was never started")
        if utt.capture_start != entry.cs:
            raise EngineError(f"utterance {utt.id!r} start time changed between messages")
        entry.ce = utt.capture_end
        self._utts[utt.id] = utt
        self._buffer.register(utt)
        self._push(utt.capture_end, RANK_CAPTURE_END, utt.speaker, utt.id, "capture_end", None)
        self._max_stamp = max(self._max_stamp, utt.capture_end)

    def set_override(self, pid: str, on: bool, t: int) -> None:
        self._require_open()
        self._push(t, RANK_OVERRIDE, pid, "override", "override", on)

    def client_answer(self, pid: str, item_id: str, answer: str, t: int) -> None:
        self._require_open()
        self._push(t, RANK_LEARNING_ANSWER, pid, item_id, "client_answer", answer)

    def note_stamp(self, t: int) -> None:
        """Advance the knowledge horizon; client stamps must not regress."""
        if t < self._max_stamp:
            raise TimingError(f"client timestamp {t} regressed below {self._max_stamp}")
        self._max_stamp = t
        self._horizon = max(self._horizon, t)

    def complete_input(self) -> None:
        """No further external events will arrive (simulator / closing)."""
        self._horizon = math.inf

    # ------------------------------------------------------------------
    # queue machinery

    def _require_open(self) -> None:
        if self.session.closed:
            raise EngineError("session is closed")

    def _push(self, t: int, rank: int, who: str, entity: str, action: str, data: Any) -> None:
        self._counter += 1
        heapq.heappush(self._queue, (t, rank, who, entity, self._counter, action, data))

    def drain(self, until: float | None = None) -> list[WireMessage]:
        """Process queued events.

        In strict mode an event waits until the knowledge horizon moves
        strictly past its time, so no later-stamped client input can slot in
        before it; otherwise `until` (wall time) bounds processing.
        """
        while self._queue:
            t = self._queue[0][0]
            if self.strict and self._horizon != math.inf and t >= self._horizon:
                break
            if until is not None and t > until:
                break
            t, rank, who, entity, _, action, data = heapq.heappop(self._queue)
            if action == "prompt_decision":
                item = self._decide_prompt(who, t)
                if item is not None:
                    self._show_item(who, item, t)
            else:
                self._dispatch(t, who, entity, action, data)
            self._refresh_aux(t)
        out, self._outbox = self._outbox, []
        return out

    def _dispatch(self, t: int, who: str, entity: str, action: str, data: Any) -> None:
        if action == "capture_start":
            self._advance(who, StageTrigger.UTTERANCE_START, t)
        elif action == "capture_end":
            self._on_capture_end(t, who, entity)
        elif action == "translation_done":
            self._on_translation_done(t, who, entity, data)
        elif action == "presentation_start":
            self._on_presentation_start(t, who, data)
        elif action == "presentation_end":
            self._on_presentation_end(t, who, data)
        elif action == "auto_answer":
            self._on_auto_answer(t, who, entity)
        elif action == "client_answer":
            self._on_client_answer(t, who, entity, data)
        elif action == "override":
            self._on_override(t, who, bool(data))
        else:
            raise RuntimeError(f"unknown engine action {action!r}")

    # ------------------------------------------------------------------
    # stage bookkeeping

    def _advance(self, pid: str, trigger: StageTrigger, t: int) -> None:
        machine = self.session.machines[pid]
        before = machine.stage
        machine.advance(trigger, t, bool(self._pipeline[pid]))
        after = machine.stage
        if after is before:
            return
        self._append(STAGE_CHANGE, pid, None, t, t, {
            "stage": after.value, "prior": before.value, "trigger": trigger.value,
        })
        self._emit(pid, MSG_STAGE_UPDATE, t, {"stage": after.value})
        self._on_stage_change(pid, before, after, t)

    def _on_stage_change(self, pid: str, before: Stage, after: Stage, t: int) -> None:
        if before is Stage.VIEWING:
            seg = self._viewing[pid]
            if seg is not None:
                self._vis_remove(seg.speaker, "presentation", t)
                self._viewing[pid] = None
        if before is Stage.LEARNING and after in BUSY_STAGES:
            self._dismiss_prompt(pid, t)
        if after in FREE_STAGES and before not in FREE_STAGES:
            if before in BUSY_STAGES:
                self._free_run[pid] = t
            self._schedule_decision(pid, t)

    def _schedule_decision(self, pid: str, t: int) -> None:
        """Queue a prompt decision no earlier than the window establishment
        point: free since free_run, prompts allowed from free_run+min_window."""
        at = max(t, self._free_run[pid] + self.config.min_window_ms)
        self._push(at, RANK_PROMPT_DECISION, pid, "", "prompt_decision", None)

    # ------------------------------------------------------------------
    # capture and translation

    def _on_capture_end(self, t: int, speaker: str, uid: str) -> None:
        utt = self._utts[uid]
        partner = self._partner[speaker]
        duration = utt.capture_end - utt.capture_start
        checksum = hashlib.sha1(f"{uid}:{duration}".encode("utf-8")).hexdigest()[:12]
        self._buffer.ingest(
            MediaSegment(uid, SegmentKind.VIDEO, duration, f"media://{uid}/video", checksum)
        )
        self._buffer.ingest(
            MediaSegment(uid, SegmentKind.AUDIO, duration, f"media://{uid}/audio", checksum)
        )
        self._append(ORIGINAL_MEDIA, speaker, uid, utt.capture_start, utt.capture_end, {
            "video_ref": f"media://{uid}/video",
            "audio_ref": f"media://{uid}/audio",
            "duration_ms": duration,
            "language": utt.language,
            "translate_requested": utt.translate_requested,
            "practice": utt.practice,
            "checksum": checksum,
        })
        foreign_correct = None
        if not utt.practice and not utt.translate_requested:
            foreign_correct = covered(utt.text, utt.language, self.lexicon)
        self._append(TRANSCRIBED_TEXT, speaker, uid, t, t, {
            "text": utt.text,
            "language": utt.language,
            "foreign_correct": foreign_correct,
        })

        if utt.practice:
            self._grade_practice(speaker, utt, t)
            self._advance(speaker, StageTrigger.UTTERANCE_END, t)
            return

        self._scheduler[partner].register_capture(speaker, uid)
        if utt.translate_requested:
            dst = self.session.config.get(partner).native_language
            if self.backend is not None:
                result = self._run_backend(utt, utt.language, dst, t)
            else:
                result = self.translator.run(utt, utt.language, dst, t, self._rng_latency)
        else:
            result = passthrough_result(utt, t, self.config.rate_ms_per_char)
        self._pipeline[partner][uid] = result.t_completed
        self._push(result.t_completed, RANK_TRANSLATION_DONE, speaker, uid, "translation_done", result)

        self._advance(speaker, StageTrigger.UTTERANCE_END, t)
        self._advance(partner, StageTrigger.REMOTE_UTTERANCE_END, t)

    def _run_backend(self, utt: Utterance, src: str, dst: str, t: int) -> TranslationResult:
        """Call the remote service; on final failure the message falls back
        to its untranslated form and the failure is logged."""
        started = time.perf_counter()
        try:
            translated = self.backend.translate(utt.text, src, dst)
        except TranslationFailedError as exc:
            self._append(TRANSLATION_FAILED, utt.speaker, utt.id, t, t, {
                "reason": exc.reason, "attempts": exc.attempts,
            })
            return passthrough_result(utt, t, self.config.rate_ms_per_char)
        if not translated:
            self._append(TRANSLATION_FAILED, utt.speaker, utt.id, t, t, {
                "reason": "malformed", "attempts": 1,
            })
            return passthrough_result(utt, t, self.config.rate_ms_per_char)
        elapsed_ms = max(int((time.perf_counter() - started) * 1000), 1)
        return TranslationResult(
            utterance_id=utt.id,
            transcribed_text=utt.text,
            translated_text=translated,
            speech_duration_ms=synthesize_speech(translated, self.config.rate_ms_per_char),
            source=SOURCE_MACHINE,
            t_requested=t,
            t_completed=t + elapsed_ms,
        )

    def _on_translation_done(self, t: int, speaker: str, uid: str, result: TranslationResult) -> None:
        utt = self._utts[uid]
        partner = self._partner[speaker]
        if result.source == SOURCE_MACHINE:
            dst = self.session.config.get(partner).native_language
            self._append(TRANSLATED_TEXT, speaker, uid, utt.capture_end, result.t_completed, {
                "source_text": result.transcribed_text,
                "text": result.translated_text,
                "src": utt.language,
                "dst": dst,
                "source": SOURCE_MACHINE,
                "latency_ms": result.t_completed - result.t_requested,
            })
            self._append(TRANSLATED_SPEECH, speaker, uid, result.t_completed, result.t_completed, {
                "text": result.translated_text,
                "duration_ms": result.speech_duration_ms,
                "rate_ms_per_char": self.config.rate_ms_per_char,
            })
            self._add_item(
                speaker, uid, DIRECTION_SENT,
                native=result.transcribed_text, foreign=result.translated_text, t=t,
            )
        synth = align(
            utt, self._buffer.segments_for(uid), result, self.config.policy, receiver=partner
        )
        for seg in self._scheduler[partner].offer(synth):
            self._pending_ps[partner].append((seg.presentation_start, seg.utterance_id))
            self._push(
                seg.presentation_start, RANK_PRESENTATION_START, partner,
                seg.utterance_id, "presentation_start", (seg, result.source),
            )

    # ------------------------------------------------------------------
    # presentation

    def _on_presentation_start(self, t: int, receiver: str, data: tuple) -> None:
        seg, source = data
        uid = seg.utterance_id
        self._pipeline[receiver].pop(uid, None)
        self._pending_ps[receiver] = [(ps, u) for ps, u in self._pending_ps[receiver] if u != uid]
        self._append(SYNTHESIZED_VIDEO, receiver, uid, seg.presentation_start, seg.presentation_end, {
            "speaker": seg.speaker,
            "caption": seg.caption_text,
            "speech_duration_ms": seg.speech_duration_ms,
            "video_duration_ms": seg.video_duration_ms,
            "final_duration_ms": seg.final_duration_ms,
            "pad_applied_ms": seg.pad_applied_ms,
            "policy": seg.policy.value,
            "ready_time": seg.ready_time,
            "source": source,
        })
        self._emit(receiver, MSG_CAPTION, t, {
            "utterance_id": uid,
            "text": seg.caption_text,
            "source_text": self._utts[uid].text,
        })
        self._emit(receiver, MSG_SYNTH_START, t, {
            "utterance_id": uid,
            "speaker": seg.speaker,
            "duration_ms": seg.final_duration_ms,
            "caption": seg.caption_text,
        })
        self._advance(receiver, StageTrigger.PRESENTATION_START, t)
        if self.session.machines[receiver].stage is Stage.VIEWING:
            self._viewing[receiver] = seg
            self._vis_add(seg.speaker, "presentation", t)
        self._push(
            seg.presentation_end, RANK_PRESENTATION_END, receiver, uid, "presentation_end", (seg, source)
        )

    def _on_presentation_end(self, t: int, receiver: str, data: tuple) -> None:
        seg, source = data
        self._advance(receiver, StageTrigger.PRESENTATION_END, t)
        self._emit(receiver, MSG_SYNTH_END, t, {"utterance_id": seg.utterance_id})
        if source == SOURCE_MACHINE:
            utt = self._utts[seg.utterance_id]
            self._add_item(
                receiver, seg.utterance_id, DIRECTION_RECEIVED,
                native=seg.caption_text, foreign=utt.text, t=t,
            )

    # ------------------------------------------------------------------
    # learning

    def _add_item(self, pid: str, uid: str, direction: str, native: str, foreign: str, t: int) -> None:
        if not native or not foreign:
            return
        key = (normalize(native), normalize(foreign))
        if key in self._item_keys[pid]:
            return
        self._item_keys[pid].add(key)
        self._item_count[pid] += 1
        item = LearningItem(
            id=f"li-{pid}-{self._item_count[pid]:03d}",
            source_utterance_id=uid,
            direction=direction,
            prompt_kind=KIND_REVIEW,
            native_text=native,
            foreign_text=foreign,
            box=1,
            due_at=t,
        )
        self._items[pid].append(item)
        if self.session.machines[pid].stage in FREE_STAGES and self._active_prompt[pid] is None:
            self._schedule_decision(pid, t)

    def _decide_prompt(self, pid: str, t: int) -> LearningItem | None:
        """Causal prompt decision at time t.

        Requires an established free run (continuously free for at least the
        minimum window) and a due item that fits before every busy time
        already known to the engine: scheduled presentations and translations
        in flight. Unknown future input can only truncate a prompt, never
        make it overlap busy stages.
        """
        if self.session.machines[pid].stage not in FREE_STAGES or self._active_prompt[pid]:
            return None
        if t - self._free_run[pid] < self.config.min_window_ms:
            return None
        if not any(item.due_at <= t for item in self._items[pid]):
            return None
        bounds: list[float] = [ps for ps, _ in self._pending_ps[pid]]
        last_end = self._scheduler[pid].last_end
        for completion in self._pipeline[pid].values():
            if completion is not None:
                bounds.append(max(completion, last_end))
        busy_lb = min(bounds) if bounds else math.inf
        return pick_item(
            self._items[pid],
            remaining_ms=busy_lb - t,
            now=t,
            rate_ms_per_char=self.config.rate_ms_per_char,
            answer_allowance_ms=self.config.answer_allowance_ms,
        )

    def _show_item(self, pid: str, item: LearningItem, t: int) -> None:
        self._advance(pid, StageTrigger.LEARNING_SHOWN, t)
        self._active_prompt[pid] = _ActivePrompt(item, t)
        self._emit(pid, MSG_LEARNING_PROMPT, t, {
            "item_id": item.id,
            "prompt_kind": item.prompt_kind,
            "direction": item.direction,
            "native_text": item.native_text,
            "foreign_text": item.foreign_text,
            "box": item.box,
        })
        if self.auto_answer:
            duration = estimate_exercise_ms(
                item, self.config.rate_ms_per_char, self.config.answer_allowance_ms
            )
            self._push(t + duration, RANK_LEARNING_ANSWER, pid, item.id, "auto_answer", None)

    def _on_auto_answer(self, t: int, pid: str, item_id: str) -> None:
        prompt = self._active_prompt[pid]
        if prompt is None or prompt.item.id != item_id:
            return
        item = prompt.item
        if self._rng_learner.random() < self.config.learner_accuracy:
            answer = item.foreign_text
        else:
            answer = " ".join(item.foreign_text.split()[:-1])
        self._finish_answer(pid, prompt, answer, t)

    def _on_client_answer(self, t: int, pid: str, item_id: str, answer: str) -> None:
        prompt = self._active_prompt[pid]
        if prompt is None or prompt.item.id != item_id:
            self._emit(pid, MSG_ERROR, t, {
                "code": "no_pending_prompt",
                "message": f"no pending prompt {item_id!r}",
            })
            return
        self._finish_answer(pid, prompt, answer or "", t)

    def _finish_answer(self, pid: str, prompt: _ActivePrompt, answer: str, t: int) -> None:
        item = prompt.item
        similarity, correct = grade_answer(item.foreign_text, answer, self.config.correct_threshold)
        updated = update_box(item, correct, t)
        self._items[pid] = [updated if i.id == item.id else i for i in self._items[pid]]
        self._append(LEARNING_ITEM_SHOWN, pid, item.source_utterance_id, prompt.shown_at, t, {
            "item_id": item.id,
            "prompt_kind": item.prompt_kind,
            "direction": item.direction,
            "native_text": item.native_text,
            "foreign_text": item.foreign_text,
            "box": item.box,
        })
        self._append(LEARNING_ANSWER, pid, item.source_utterance_id, t, t, {
            "item_id": item.id,
            "answer": answer,
            "similarity": similarity,
            "correct": correct,
            "box": updated.box,
            "scored": True,
            "practice": False,
        })
        self._active_prompt[pid] = None
        self._emit(pid, MSG_LEARNING_ANSWER, t, {
            "item_id": item.id, "similarity": similarity, "correct": correct, "box": updated.box,
        })
        self._advance(pid, StageTrigger.LEARNING_DONE, t)

    def _dismiss_prompt(self, pid: str, t: int) -> None:
        prompt = self._active_prompt[pid]
        if prompt is None:
            return
        item = prompt.item
        if t > prompt.shown_at:
            self._append(LEARNING_ITEM_SHOWN, pid, item.source_utterance_id, prompt.shown_at, t, {
                "item_id": item.id,
                "prompt_kind": item.prompt_kind,
                "direction": item.direction,
                "native_text": item.native_text,
                "foreign_text": item.foreign_text,
                "box": item.box,
            })
        self._active_prompt[pid] = None

    def _grade_practice(self, speaker: str, utt: Utterance, t: int) -> None:
        candidates = self._items[speaker]
        if candidates:
            graded = [
                (grade_answer(item.foreign_text, utt.text, self.config.correct_threshold), item)
                for item in candidates
            ]
            graded.sort(key=lambda g: (-g[0][0], g[1].id))
            (similarity, correct), best = graded[0]
            updated = update_box(best, correct, t)
            self._items[speaker] = [updated if i.id == best.id else i for i in candidates]
            payload = {
                "item_id": best.id,
                "answer": utt.text,
                "similarity": similarity,
                "correct": correct,
                "box": updated.box,
                "scored": True,
                "practice": True,
            }
            self._emit(speaker, MSG_LEARNING_ANSWER, t, {
                "item_id": best.id, "similarity": similarity, "correct": correct, "box": updated.box,
            })
        else:
            payload = {
                "item_id": None,
                "answer": utt.text,
                "similarity": None,
                "correct": None,
                "box": None,
                "scored": False,
                "practice": True,
            }
        self._append(LEARNING_ANSWER, speaker, utt.id, t, t, payload)

    # ------------------------------------------------------------------
    # visibility and auxiliary pictures

    def _on_override(self, t: int, pid: str, on: bool) -> None:
        self.session.overrides[pid] = on
        if on:
            self._vis_add(pid, "override", t)
        else:
            self._vis_remove(pid, "override", t)
        # The toggle always echoes, even when the net state did not flip.
        cause = self._vis_cause[pid]
        self._emit(pid, MSG_VISIBILITY_UPDATE, t, {
            "visible": cause is not None,
            "cause": cause.value if cause else None,
        })

    def _vis_add(self, pid: str, source: str, t: int) -> None:
        self._vis_sources[pid].add(source)
        self._vis_update(pid, t)

    def _vis_remove(self, pid: str, source: str, t: int) -> None:
        self._vis_sources[pid].discard(source)
        self._vis_update(pid, t)

    def _vis_update(self, pid: str, t: int) -> None:
        sources = self._vis_sources[pid]
        if "presentation" in sources:
            new_cause: VisibilityCause | None = VisibilityCause.SYNTHESIZED
        elif "override" in sources:
            new_cause = VisibilityCause.MANUAL
        else:
            new_cause = None
        old_cause = self._vis_cause[pid]
        if new_cause is old_cause:
            return
        if old_cause is not None and t > self._vis_since[pid]:
            self._append(VISIBILITY_CHANGE, pid, None, self._vis_since[pid], t, {
                "visible": True, "cause": old_cause.value,
            })
        self._vis_cause[pid] = new_cause
        self._vis_since[pid] = t
        if (old_cause is None) != (new_cause is None):
            self._emit(pid, MSG_VISIBILITY_UPDATE, t, {
                "visible": new_cause is not None,
                "cause": new_cause.value if new_cause else None,
            })

    def _refresh_aux(self, t: int) -> None:
        for pid in self.session.participant_ids:
            partner = self._partner[pid]
            if self.session.machines[partner].stage is Stage.SPEAKING:
                reason = AUX_REMOTE_SPEAKING
            elif self._pipeline[pid]:
                reason = AUX_TRANSLATING
            else:
                reason = AUX_NONE
            if reason != self._aux[pid]:
                self._aux[pid] = reason
                self._emit(pid, MSG_AUX_PICTURE, t, {"reason": reason})

    # ------------------------------------------------------------------
    # wire protocol entry point

    def handle_client(self, pid: str, mtype: str, payload: dict, t: int) -> list[WireMessage]:
        """Apply one client message stamped at session time t, then drain."""
        self._require_open()
        if pid not in self._partner:
            raise EngineError(f"unknown participant {pid!r}")
        try:
            self.note_stamp(t)
            if mtype == MSG_UTTERANCE_START:
                self.begin_utterance(pid, str(payload["utterance_id"]), t)
            elif mtype == MSG_UTTERANCE_END:
                self.end_utterance(self._utterance_from_payload(pid, payload, t))
            elif mtype == MSG_LEARNING_ANSWER:
                self.client_answer(pid, str(payload.get("item_id", "")), payload.get("answer", ""), t)
            elif mtype == MSG_VISIBILITY_UPDATE:
                self.set_override(pid, bool(payload.get("override", False)), t)
            else:
                raise EngineError(f"unsupported client message type {mtype!r}")
        except (EngineError, TimingError, KeyError, ValueError) as exc:
            self._emit(pid, MSG_ERROR, t, {"code": "rejected", "message": str(exc)})
            out, self._outbox = self._outbox, []
            return out
        out = self.drain() if self.strict else self.drain(until=t)
        # Receipt for the sender: lets scripted clients serialize their sends.
        out.append(WireMessage(MSG_STAGE_UPDATE, self.log.session_id, t, {
            "stage": self.session.machines[pid].stage.value,
            "ack": mtype,
            "ack_id": str(payload.get("utterance_id") or payload.get("item_id") or ""),
        }, to=pid))
        return out

    def _utterance_from_payload(self, pid: str, payload: dict, t: int) -> Utterance:
        uid = str(payload["utterance_id"])
        entry = next(
            (k for k in self._started[pid] if k.utterance_id == uid and k.ce is None), None
        )
        if entry is None:
            raise EngineError(f"utterance {uid!r} was never started")
        translate = bool(payload.get("translate_requested", True))
        practice = bool(payload.get("practice", False))
        me = self.session.config.get(pid)
        language = payload.get("language") or (
            me.native_language if translate and not practice else me.foreign_language
        )
        return Utterance(
            id=uid,
            speaker=pid,
            language=language,
            text=str(payload.get("text", "")),
            capture_start=entry.cs,
            capture_end=t,
            translate_requested=translate,
            practice=practice,
        )

    # ------------------------------------------------------------------
    # close

    def next_due(self) -> int | None:
        """Earliest queued event time, for wall-clock scheduling."""
        return self._queue[0][0] if self._queue else None

    def close(self, explicit_end: int | None = None) -> list[WireMessage]:
        """Drain everything, close the stage partition and the log, and emit
        final metrics snapshots."""
        if self.session.closed:
            return []
        self.complete_input()
        self.drain()
        t_close = max(self._last_event_t, self._max_stamp, explicit_end or 0)
        for pid in sorted(self.session.participant_ids):
            self._dismiss_prompt(pid, t_close)
        for pid in sorted(self.session.participant_ids):
            stage = self.session.machines[pid].stage
            self._append(STAGE_CHANGE, pid, None, t_close, t_close, {
                "stage": stage.value, "prior": stage.value, "trigger": "SessionClose",
            })
        for pid in sorted(self.session.participant_ids):
            cause = self._vis_cause[pid]
            if cause is not None and t_close > self._vis_since[pid]:
                self._append(VISIBILITY_CHANGE, pid, None, self._vis_since[pid], t_close, {
                    "visible": True, "cause": cause.value,
                })
                self._vis_cause[pid] = None
        self.log.close(t_close)
        self.session.closed = True
        self.session.session_end = t_close
        snapshot = {
            pid: compute_metrics(
                self.log, pid, self.config.discount_factor, self.config.discount_cap
            ).as_dict()
            for pid in sorted(self.session.participant_ids)
        }
        for pid in self.session.participant_ids:
            self._emit(pid, MSG_METRICS_SNAPSHOT, t_close, {"metrics": snapshot})
        out, self._outbox = self._outbox, []
        return out

    # ------------------------------------------------------------------
    # plumbing

    def _append(
        self,
        kind: str,
        participant: str | None,
        utt: str | None,
        t_start: int,
        t_end: int,
        payload: dict,
    ) -> None:
        self.log.append(kind, participant, utt, t_start, t_end, payload)
        self._last_event_t = max(self._last_event_t, t_end)

    def _emit(self, to: str, mtype: str, t: int, payload: dict) -> None:
        self._outbox.append(
            WireMessage(type=mtype, session_id=self.log.session_id, t=t, payload=payload, to=to)
        )


def visibility_state(remote_viewing: bool, override: bool) -> bool:
    """A participant is visible while their synthesized segment is being
    viewed or they switched themselves on."""
    return remote_viewing or override


def build_engine(
    trace: Trace,
    config: SimulationConfig,
    lexicon: Lexicon,
    log: SessionLog | None = None,
    auto_answer: bool = True,
    strict: bool = True,
) -> SessionEngine:
    session = create_session(SessionConfig(trace.session_id, trace.participants))
    log = log if log is not None else SessionLog(trace.session_id)
    return SessionEngine(session, config, lexicon, log, auto_answer=auto_answer, strict=strict)


def trace_utterances(trace: Trace, config: SimulationConfig) -> list[Utterance]:
    """Resolve trace utterance specs into concrete captures."""
    by_id = {p.id: p for p in trace.participants}
    utterances: list[Utterance] = []
    last_end: dict[str, int] = {}
    for index, spec in enumerate(trace.utterances):
        duration = resolve_duration(
            spec,
            rate_ms_per_char=config.rate_ms_per_char,
            vad_threshold=config.vad_threshold,
            vad_min_frames=config.vad_min_frames,
            vad_hangover_frames=config.vad_hangover_frames,
            vad_frame_period_ms=config.vad_frame_period_ms,
        )
        speaker = by_id[spec.speaker]
        language = (
            speaker.native_language if spec.translate and not spec.practice
            else speaker.foreign_language
        )
        cs, ce = spec.t, spec.t + duration
        if spec.speaker in last_end and cs < last_end[spec.speaker]:
            raise TraceError(
                f"utterance {index}: speaker {spec.speaker!r} overlaps their previous capture"
            )
        last_end[spec.speaker] = ce
        utterances.append(
            Utterance(
                id=spec.id or f"u{index:03d}",
                speaker=spec.speaker,
                language=language,
                text=spec.text,
                capture_start=cs,
                capture_end=ce,
                translate_requested=spec.translate,
                practice=spec.practice,
                frame_energies=spec.frame_energies,
            )
        )
    return utterances


def simulate(trace: Trace, config: SimulationConfig, lexicon: Lexicon) -> SessionLog:
    """Run a trace to completion under the virtual clock.

    The output log is a pure function of (trace, config): identical inputs
    serialize to identical bytes.
    """
    trace.validate()
    engine = build_engine(trace, config, lexicon)
    for utt in trace_utterances(trace, config):
        engine.add_utterance(utt)
    engine.complete_input()
    engine.close(trace.session_end_ms)
    return engine.log
