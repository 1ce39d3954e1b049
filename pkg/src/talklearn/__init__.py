"""Delay-matched cross-lingual conversation sessions with wait-learning."""

from .core import (
    Participant,
    advance_stage,
    Session,
    SessionConfig,
    Stage,
    StageInterval,
    StageTrigger,
    Utterance,
    create_session,
    stage_intervals,
    validate_timeline,
)
from .engine import SessionEngine, SimulationConfig, WireMessage, simulate, visibility_state
from .telemetry import SessionLog, compute_metrics, parse_log, serialize_log
from .trace import Trace, UtteranceSpec, load_trace

__version__ = "0.1.0"

__all__ = [
    "Participant",
    "advance_stage",
    "Session",
    "SessionConfig",
    "SessionEngine",
    "SessionLog",
    "SimulationConfig",
    "Stage",
    "StageInterval",
    "StageTrigger",
    "Trace",
    "Utterance",
    "UtteranceSpec",
    "WireMessage",
    "compute_metrics",
    "create_session",
    "load_trace",
    "parse_log",
    "serialize_log",
    "simulate",
    "stage_intervals",
    "validate_timeline",
    "visibility_state",
    "__version__",
]
