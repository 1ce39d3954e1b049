"""FastAPI service: REST endpoints wrapping the core package plus the
two-party WebSocket wire protocol.

Endpoints:
    GET  /health
    POST /simulate                      run a trace under the virtual clock
    POST /report                        metrics + validation for a log
    POST /quiz/build, POST /quiz/score  language tests from a log
    POST /sessions/{sid}/questionnaire  store answers on an open session
    WS   /ws                            live session wire protocol
"""

from __future__ import annotations

import asyncio
import logging
import os
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from .config import AppConfig, load_config
from .core import ConfigurationError, Participant, SessionConfig, create_session, validate_timeline
from .engine import MSG_ERROR, MSG_JOIN, SessionEngine, SimulationConfig, WireMessage, simulate
from .learning import (
    InsufficientMaterialError,
    LanguageTest,
    TestItem,
    build_language_test,
    score_test,
)
from .telemetry import (
    LogParseError,
    QuestionnaireRecord,
    SessionLog,
    compute_metrics,
    parse_log,
    render_metrics_table,
    serialize_log,
    write_log,
)
from .trace import TraceError, trace_from_dict
from .translation import Lexicon, RemoteTranslator

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# request / response models


class ParticipantModel(BaseModel):
    id: str
    native_language: str
    foreign_language: str


class UtteranceSpecModel(BaseModel):
    speaker: str
    t: int
    text: str
    translate: bool = True
    practice: bool = False
    id: str | None = None
    duration_ms: int | None = None
    frame_energies: list[float] | None = None


class TraceModel(BaseModel):
    session_id: str = "session"
    participants: list[ParticipantModel]
    utterances: list[UtteranceSpecModel]
    keywords: list[str] = Field(default_factory=list)
    session_end_ms: int | None = None
    lexicon: dict | None = None


class SimulateRequest(BaseModel):
    trace: TraceModel
    seed: int | None = None
    config: dict = Field(default_factory=dict)


class SimulateResponse(BaseModel):
    session_id: str
    events: int
    session_end_ms: int
    jsonl: str


class ReportRequest(BaseModel):
    jsonl: str


class MetricsModel(BaseModel):
    participant: str
    messages_sent: int
    untranslated_pct: float
    machine_pct: float
    stage_durations: dict[str, int]
    free_time_ms: int
    learning_items_attempted: int
    learning_accuracy: float
    discount_ratio: float


class ReportResponse(BaseModel):
    session_id: str
    metrics: dict[str, MetricsModel]
    text: str
    violations: list[str]


class QuizBuildRequest(BaseModel):
    jsonl: str
    n_items: int = 4
    seed: int = 0
    participant: str | None = None


class TestItemModel(BaseModel):
    kind: str
    foreign_text: str
    expected: str
    choices: list[str] | None = None


class LanguageTestModel(BaseModel):
    id: str
    seed: int
    items: list[TestItemModel]


class QuizScoreRequest(BaseModel):
    test: LanguageTestModel
    answers: list[str | None]
    participant: str = ""


class TestResultModel(BaseModel):
    test_id: str
    participant: str
    n_retold: int
    n_recognized: int
    per_item: list[dict]


class LikertAnswerModel(BaseModel):
    question_id: str
    likert: int = Field(ge=1, le=5)


class QuestionnaireRequest(BaseModel):
    participant: str
    answers: list[LikertAnswerModel]
    free_text: str | None = None


# ---------------------------------------------------------------------------
# live sessions


class LiveSession:
    """Owner of one live session: serializes every engine mutation."""

    def __init__(self, session_id: str, app_config: AppConfig) -> None:
        self.session_id = session_id
        self.app_config = app_config
        self.lock = asyncio.Lock()
        self.engine: SessionEngine | None = None
        self.pending: list[Participant] = []
        self.sockets: dict[str, WebSocket] = {}
        self.outboxes: dict[str, asyncio.Queue] = {}
        self.sender_tasks: dict[str, asyncio.Task] = {}
        self.ticker: asyncio.Task | None = None
        self.kick = asyncio.Event()
        self.epoch: float | None = None
        self.session_end_hint: int | None = None
        self.closed = False

    @property
    def virtual(self) -> bool:
        return self.app_config.clock == "virtual"

    def now_ms(self) -> int:
        if self.epoch is None:
            return 0
        return int((time.monotonic() - self.epoch) * 1000)

    async def join(
        self,
        participant: Participant,
        websocket: WebSocket,
        session_end_ms: int | None = None,
    ) -> None:
        async with self.lock:
            if self.closed:
                raise ConfigurationError("session already closed")
            if session_end_ms is not None:
                self.session_end_hint = max(self.session_end_hint or 0, int(session_end_ms))
            if len(self.sockets) >= 2:
                raise ConfigurationError("session full")
            if participant.id in self.sockets:
                raise ConfigurationError(f"participant {participant.id!r} already joined")
            session = None
            if len(self.pending) == 1:
                # Validate the pair before committing any state.
                session = create_session(
                    SessionConfig(self.session_id, (self.pending[0], participant))
                )
            self.pending.append(participant)
            self.sockets[participant.id] = websocket
            queue: asyncio.Queue = asyncio.Queue()
            self.outboxes[participant.id] = queue
            self.sender_tasks[participant.id] = asyncio.create_task(
                self._sender(participant.id, websocket, queue)
            )
            started = False
            if session is not None:
                lexicon = self.app_config.load_lexicon()
                backend = None
                if (
                    self.app_config.translation_mode == "remote"
                    and self.app_config.translation_endpoint
                ):
                    backend = RemoteTranslator(self.app_config.translation_endpoint)
                self.engine = SessionEngine(
                    session,
                    self.app_config.sim,
                    lexicon,
                    SessionLog(self.session_id),
                    auto_answer=self.virtual,
                    strict=self.virtual,
                    backend=backend,
                )
                self.epoch = time.monotonic()
                started = True
                if not self.virtual:
                    self.ticker = asyncio.create_task(self._tick())
            ack = {
                "session_id": self.session_id,
                "participants": [p.id for p in self.pending],
                "started": started,
            }
            for pid in self.sockets:
                self._post(pid, WireMessage(MSG_JOIN, self.session_id, self._stamp(), ack, to=pid))

    def _stamp(self) -> int:
        return 0 if self.epoch is None else self.now_ms()

    def _post(self, pid: str, message: WireMessage) -> None:
        queue = self.outboxes.get(pid)
        if queue is not None:
            queue.put_nowait(message.as_dict())

    def _route(self, messages: list[WireMessage]) -> None:
        for message in messages:
            if message.to:
                self._post(message.to, message)

    async def handle(self, pid: str, message: dict) -> None:
        async with self.lock:
            if self.closed:
                return
            if self.engine is None:
                self._post(pid, WireMessage(
                    MSG_ERROR, self.session_id, 0,
                    {"code": "not_started", "message": "waiting for the second participant"},
                    to=pid,
                ))
                return
            mtype = message.get("type", "")
            payload = message.get("payload", {}) or {}
            t = int(message.get("t", 0)) if self.virtual else self.now_ms()
            out = self.engine.handle_client(pid, mtype, payload, t)
            self._route(out)
        self.kick.set()

    async def leave(self, pid: str) -> None:
        async with self.lock:
            if self.closed:
                return
            self.closed = True
            if self.engine is not None and not self.engine.session.closed:
                explicit = self.session_end_hint if self.virtual else self.now_ms()
                out = self.engine.close(explicit)
                self._route(out)
                self._flush_log()
            for queue in self.outboxes.values():
                queue.put_nowait(None)
        if self.ticker:
            self.ticker.cancel()

    async def shutdown(self) -> None:
        await self.leave("")

    def _flush_log(self) -> None:
        assert self.engine is not None
        logs_dir = self.app_config.logs_dir
        try:
            os.makedirs(logs_dir, exist_ok=True)
            path = os.path.join(logs_dir, f"{self.session_id}.jsonl")
            write_log(self.engine.log, path)
            logger.info("session %s: log flushed to %s", self.session_id, path)
        except OSError:
            logger.exception("session %s: failed to flush log", self.session_id)

    async def _sender(self, pid: str, websocket: WebSocket, queue: asyncio.Queue) -> None:
        try:
            while True:
                item = await queue.get()
                if item is None:
                    await websocket.close()
                    break
                await websocket.send_json(item)
        except Exception:
            pass

    async def _tick(self) -> None:
        """Wall-clock pump: fires queued engine events as their time comes."""
        try:
            while not self.closed:
                async with self.lock:
                    due = None
                    if self.engine is not None and not self.engine.session.closed:
                        self._route(self.engine.drain(until=self.now_ms()))
                        due = self.engine.next_due()
                now = self.now_ms()
                delay = 0.25 if due is None else max((due - now) / 1000.0, 0.0)
                try:
                    await asyncio.wait_for(self.kick.wait(), timeout=min(delay, 0.25) + 0.005)
                except asyncio.TimeoutError:
                    pass
                self.kick.clear()
        except asyncio.CancelledError:
            pass


class SessionRegistry:
    def __init__(self, app_config: AppConfig) -> None:
        self.app_config = app_config
        self.sessions: dict[str, LiveSession] = {}
        self._lock = asyncio.Lock()

    async def get_or_create(self, session_id: str) -> LiveSession:
        async with self._lock:
            live = self.sessions.get(session_id)
            if live is None or live.closed:
                live = LiveSession(session_id, self.app_config)
                self.sessions[session_id] = live
            return live

    def get_open(self, session_id: str) -> LiveSession | None:
        live = self.sessions.get(session_id)
        if live is None or live.closed:
            return None
        return live

    async def shutdown(self) -> None:
        for live in list(self.sessions.values()):
            if not live.closed:
                await live.shutdown()


# ---------------------------------------------------------------------------
# app factory


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def create_app(app_config: AppConfig | None = None) -> FastAPI:
    cfg = app_config or load_config()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        await app.state.registry.shutdown()

    app = FastAPI(title="talklearn", lifespan=lifespan)
    app.state.config = cfg
    app.state.registry = SessionRegistry(cfg)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "clock": cfg.clock}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate_endpoint(request: SimulateRequest) -> SimulateResponse:
        sim_cfg = SimulationConfig.from_mapping(_merge(cfg.raw, request.config))
        if request.seed is not None:
            sim_cfg.seed = request.seed
        try:
            trace = trace_from_dict(request.trace.model_dump())
            if trace.lexicon_entries:
                pair = trace.lexicon_pair or ("en", "fr")
                lexicon = Lexicon(pair[0], pair[1], trace.lexicon_entries)
            else:
                lexicon = cfg.load_lexicon()
            log = simulate(trace, sim_cfg, lexicon)
        except (TraceError, ConfigurationError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SimulateResponse(
            session_id=log.session_id,
            events=len(log.events),
            session_end_ms=log.session_end or 0,
            jsonl=serialize_log(log).decode("utf-8"),
        )

    @app.post("/report", response_model=ReportResponse)
    def report_endpoint(request: ReportRequest) -> ReportResponse:
        try:
            log = parse_log(request.jsonl)
        except LogParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        metrics = {
            pid: compute_metrics(log, pid, cfg.sim.discount_factor, cfg.sim.discount_cap)
            for pid in log.participants
        }
        return ReportResponse(
            session_id=log.session_id,
            metrics={pid: MetricsModel(**m.as_dict()) for pid, m in metrics.items()},
            text=render_metrics_table(list(metrics.values())),
            violations=validate_timeline(log.events),
        )

    @app.post("/quiz/build", response_model=LanguageTestModel)
    def quiz_build(request: QuizBuildRequest) -> LanguageTestModel:
        try:
            log = parse_log(request.jsonl)
            test = build_language_test(
                log.events, request.n_items, request.seed, request.participant
            )
        except (LogParseError, InsufficientMaterialError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return LanguageTestModel(
            id=test.id,
            seed=test.seed,
            items=[
                TestItemModel(
                    kind=i.kind,
                    foreign_text=i.foreign_text,
                    expected=i.expected,
                    choices=list(i.choices) if i.choices else None,
                )
                for i in test.items
            ],
        )

    @app.post("/quiz/score", response_model=TestResultModel)
    def quiz_score(request: QuizScoreRequest) -> TestResultModel:
        test = LanguageTest(
            id=request.test.id,
            seed=request.test.seed,
            items=tuple(
                TestItem(
                    kind=i.kind,
                    foreign_text=i.foreign_text,
                    expected=i.expected,
                    choices=tuple(i.choices) if i.choices else None,
                )
                for i in request.test.items
            ),
        )
        result = score_test(test, request.answers, request.participant)
        return TestResultModel(
            test_id=result.test_id,
            participant=result.participant,
            n_retold=result.n_retold,
            n_recognized=result.n_recognized,
            per_item=[dict(item) for item in result.per_item],
        )

    @app.post("/sessions/{session_id}/questionnaire")
    async def questionnaire(session_id: str, request: QuestionnaireRequest) -> dict:
        live = app.state.registry.get_open(session_id)
        if live is None or live.engine is None:
            raise HTTPException(status_code=404, detail=f"no open session {session_id!r}")
        async with live.lock:
            live.engine.log.record_questionnaire(
                QuestionnaireRecord(
                    participant=request.participant,
                    answers=tuple((a.question_id, a.likert) for a in request.answers),
                    free_text=request.free_text,
                )
            )
        return {"status": "recorded", "session_id": session_id}

    @app.websocket("/ws")
    async def websocket_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        live: LiveSession | None = None
        pid: str | None = None
        try:
            first = await websocket.receive_json()
            if first.get("type") != MSG_JOIN:
                await websocket.send_json(
                    WireMessage(MSG_ERROR, "", 0, {
                        "code": "join_required",
                        "message": "first message must be Join",
                    }).as_dict()
                )
                await websocket.close()
                return
            session_id = first.get("session_id", "")
            payload = first.get("payload") or {}
            info = payload.get("participant") or {}
            try:
                participant = Participant(
                    id=info.get("id", ""),
                    native_language=info.get("native_language", ""),
                    foreign_language=info.get("foreign_language", ""),
                )
                live = await app.state.registry.get_or_create(session_id)
                await live.join(participant, websocket, payload.get("session_end_ms"))
                pid = participant.id
            except ConfigurationError as exc:
                await websocket.send_json(
                    WireMessage(MSG_ERROR, session_id, 0, {
                        "code": "join_rejected", "message": str(exc),
                    }).as_dict()
                )
                await websocket.close()
                return
            while True:
                message = await websocket.receive_json()
                await live.handle(pid, message)
        except WebSocketDisconnect:
            pass
        finally:
            if live is not None and pid is not None:
                await live.leave(pid)

    return app


app = create_app()
