"""Application configuration: JSON file with translation, delay_match,
learning, and server sections. TALKLEARN_CONFIG overrides the path."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources

from .engine import SimulationConfig
from .translation import Lexicon

ENV_CONFIG = "TALKLEARN_CONFIG"

DEFAULT_LEXICON_PAIR = ("en", "fr")


@dataclass
class AppConfig:
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    translation_mode: str = "mock"
    translation_endpoint: str | None = None
    lexicon_path: str | None = None
    host: str = "127.0.0.1"
    port: int = 8765
    clock: str = "wall"  # wall | virtual
    logs_dir: str = "logs"
    raw: dict = field(default_factory=dict)

    def load_lexicon(self) -> Lexicon:
        if self.lexicon_path:
            return Lexicon.load(self.lexicon_path, *DEFAULT_LEXICON_PAIR)
        return default_lexicon()


def default_lexicon() -> Lexicon:
    data = json.loads(
        resources.files("talklearn.data").joinpath("lexicon_en_fr.json").read_text("utf-8")
    )
    return Lexicon(data["src"], data["dst"], data["entries"])


def default_questionnaire() -> list[dict]:
    return json.loads(
        resources.files("talklearn.data").joinpath("questionnaire.json").read_text("utf-8")
    )


def sample_trace_names() -> list[str]:
    traces = resources.files("talklearn.data").joinpath("traces")
    return sorted(p.name for p in traces.iterdir() if p.name.endswith(".json"))


def load_sample_trace(name: str) -> dict:
    return json.loads(
        resources.files("talklearn.data").joinpath(f"traces/{name}").read_text("utf-8")
    )


def load_config(path: str | None = None) -> AppConfig:
    """Read configuration, env var winning over the default location; a
    missing file yields pure defaults."""
    path = path or os.environ.get(ENV_CONFIG)
    data: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    cfg = AppConfig(raw=data)
    cfg.sim = SimulationConfig.from_mapping(data)
    translation = data.get("translation", {})
    cfg.translation_mode = translation.get("mode", cfg.translation_mode)
    cfg.translation_endpoint = translation.get("endpoint")
    cfg.lexicon_path = translation.get("lexicon_path")
    server = data.get("server", {})
    cfg.host = server.get("host", cfg.host)
    cfg.port = server.get("port", cfg.port)
    cfg.clock = server.get("clock", cfg.clock)
    cfg.logs_dir = server.get("logs_dir", cfg.logs_dir)
    return cfg
