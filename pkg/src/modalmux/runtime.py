"""Runtime assembly: configuration loading and session construction.

Configuration is a JSON file with environment-variable overrides
(MODALMUX_<SECTION>_<KEY>). Backends default to the bundled deterministic
tables so the whole runtime works offline; any backend can be switched to a
remote chat-completion endpoint per config.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

from .controller import ControllerBackend, HttpChatBackend, ScriptedBackend
from .experts import ExpertPool, MockAsrAdapter, MockExpertBackend
from .memory import MemoryStore
from .orchestrator import Session, SessionConfig
from .protocol import InstructionRegistry
from .tts import MockTtsEngine

DATA_DIR = Path(__file__).parent / "data"

DEFAULT_CONTROLLER_TABLE = DATA_DIR / "controller_table.json"
DEFAULT_EXPERT_TABLES = {
    "vision": DATA_DIR / "vision_table.json",
    "reasoning": DATA_DIR / "reasoning_table.json",
}
GARDEN_SCENARIO = DATA_DIR / "garden_scenario.json"
DEFAULT_BENCH_CORPUS = DATA_DIR / "bench_corpus.txt"


@dataclass
class BackendConfig:
    kind: str = "mock"  # mock | http
    table: Optional[str] = None
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key: Optional[str] = None


@dataclass
class RuntimeConfig:
    controller: BackendConfig = field(default_factory=BackendConfig)
    experts: dict[str, BackendConfig] = field(
        default_factory=lambda: {"vision": BackendConfig(), "reasoning": BackendConfig()}
    )
    memory_budget: int = 8000
    keep_recent_turns: int = 2
    prompt_budget: int = 6000
    controller_deadline_s: float = 30.0
    expert_deadline_s: float = 60.0
    cache_threshold: float = 0.3
    tts_workers: int = 4
    tts_base_ms: float = 5.0
    tts_jitter_ms: float = 0.0
    tts_rate: int = 22050
    max_sessions: int = 32
    max_payload_bytes: int = 1_000_000
    auth_token: Optional[str] = None
    audio_sink_dir: Optional[str] = None
    memory_dir: Optional[str] = None

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "RuntimeConfig":
        raw: dict = {}
        if path is not None:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls()
        for key, value in raw.items():
            if key == "controller":
                cfg.controller = BackendConfig(**value)
            elif key == "experts":
                cfg.experts = {m: BackendConfig(**b) for m, b in value.items()}
            elif hasattr(cfg, key):
                setattr(cfg, key, value)
        for key in (
            "memory_budget", "prompt_budget", "tts_workers", "max_sessions",
        ):
            env = os.environ.get(f"MODALMUX_{key.upper()}")
            if env is not None:
                setattr(cfg, key, int(env))
        env = os.environ.get("MODALMUX_AUTH_TOKEN")
        if env:
            cfg.auth_token = env
        return cfg


def _build_controller(cfg: BackendConfig, deadline_s: float) -> ControllerBackend:
    if cfg.kind == "http":
        return HttpChatBackend(
            base_url=cfg.base_url or "http://localhost:8000/v1",
            model=cfg.model or "controller",
            api_key=cfg.api_key,
            timeout_s=deadline_s,
        )
    table = Path(cfg.table) if cfg.table else DEFAULT_CONTROLLER_TABLE
    return ScriptedBackend.from_table_file(table, identity="scripted-controller")


class _HttpExpertBackend:
    """Remote expert over the same chat-completion wire shape."""

    def __init__(self, modality: str, cfg: BackendConfig, deadline_s: float):
        self.modality = modality
        self.identity = f"http:{cfg.model or modality}"
        self._inner = HttpChatBackend(
            base_url=cfg.base_url or "http://localhost:8000/v1",
            model=cfg.model or modality,
            api_key=cfg.api_key,
            timeout_s=deadline_s,
        )

    def invoke(self, query: str, context: str, media: list[bytes]) -> str:
        from .controller import PromptBundle
        import base64

        parts = [query]
        for blob in media:
            parts.append(f"data:application/octet-stream;base64,{base64.b64encode(blob).decode()}")
        return self._inner.generate(
            PromptBundle(system=f"You are the {self.modality} expert.", context=context,
                         query="\n".join(parts))
        )

    def health(self) -> bool:
        return True


def _build_expert(modality: str, cfg: BackendConfig, deadline_s: float):
    if cfg.kind == "http":
        return _HttpExpertBackend(modality, cfg, deadline_s)
    table_path = Path(cfg.table) if cfg.table else DEFAULT_EXPERT_TABLES.get(modality)
    if table_path is None or not table_path.exists():
        entries = [(".*", f"no {modality} observations available")]
    else:
        table = json.loads(table_path.read_text(encoding="utf-8"))
        entries = [(e["match"], e["respond"]) for e in table["entries"]]
    return MockExpertBackend(modality, entries, identity=f"mock-{modality}")


def deterministic_ids(session_id: str):
    """Stable uuid-shaped id sequence for reproducible runs."""
    counter = {"n": 0}

    def factory() -> str:
        counter["n"] += 1
        return str(uuid.uuid5(uuid.NAMESPACE_URL, f"modalmux:{session_id}:{counter['n']}"))

    return factory


def fixed_clock(start: Optional[datetime] = None, step_ms: int = 1000):
    """Deterministic timestamp source advancing a fixed step per call."""
    state = {"t": start or datetime(2024, 1, 1, tzinfo=timezone.utc)}

    def clock() -> datetime:
        state["t"] = state["t"] + timedelta(milliseconds=step_ms)
        return state["t"]

    return clock


def build_session(
    config: RuntimeConfig,
    session_id: Optional[str] = None,
    deterministic: bool = False,
    seed: int = 0,
) -> Session:
    sid = session_id or str(uuid.uuid4())
    store = MemoryStore(
        session_id=sid,
        budget=config.memory_budget,
        keep_recent_turns=config.keep_recent_turns,
        path=(Path(config.memory_dir) / f"{sid}.jsonl") if config.memory_dir else None,
        id_factory=deterministic_ids(sid) if deterministic else None,
        clock=fixed_clock() if deterministic else None,
    )
    registry = InstructionRegistry()
    pool = ExpertPool()
    for modality, backend_cfg in config.experts.items():
        pool.register(modality, _build_expert(modality, backend_cfg, config.expert_deadline_s),
                      registry=registry)
    session_cfg = SessionConfig(
        controller_deadline_s=config.controller_deadline_s,
        expert_deadline_s=config.expert_deadline_s,
        prompt_budget=config.prompt_budget,
        tts_workers=config.tts_workers,
        cache_threshold=config.cache_threshold,
        audio_sink_dir=Path(config.audio_sink_dir) if config.audio_sink_dir else None,
    )
    engine = MockTtsEngine(
        base_ms=config.tts_base_ms,
        jitter_ms=config.tts_jitter_ms,
        seed=seed,
        rate=config.tts_rate,
    )
    return Session(
        session_id=sid,
        store=store,
        registry=registry,
        controller_backend=_build_controller(config.controller, config.controller_deadline_s),
        experts=pool,
        asr=MockAsrAdapter(),
        engine=engine,
        config=session_cfg,
    )
