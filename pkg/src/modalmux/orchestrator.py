"""Session state machine: one full turn from input to audio and memory update.

A turn runs: transcribe, controller pass, then exactly one of three paths:
stop (clear speech, note the interruption), listen (hold an incomplete query),
or the full pipeline (expert fan-out, fusion, segmentation, parallel speech,
memory update with compression). An out-of-band interrupt channel can preempt
a speaking or processing turn at any time.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

from . import tts
from .controller import (
    ControllerBackend,
    FusionInput,
    compose_prompt,
    integrate,
    run_controller,
)
from .errors import BudgetInfeasible, ModalmuxError, UnknownTurn
from .experts import (
    EXPERT_OUTPUT_TAG,
    AsrAdapter,
    ExpertCallRecord,
    ExpertPool,
    invoke_selected,
    transcribe,
)
from .memory import MemoryStore, terms
from .protocol import InstructionRegistry, TokenKind, select_modalities
from .tts import ConcatResult, MockTtsEngine, Segment, TtsQueue

INTERRUPT_TAG = "interrupt_flag"
AWAIT_TAG = "await_completion"


class SessionState(Enum):
    IDLE = "idle"
    AWAITING_COMPLETION = "awaiting_completion"
    PROCESSING = "processing"
    SPEAKING = "speaking"


@dataclass
class SessionConfig:
    controller_deadline_s: float = 30.0
    expert_deadline_s: float = 60.0
    prompt_budget: int = 6000
    tts_workers: int = 4
    cache_threshold: float = 0.3
    retrieval_k: int = 3
    audio_sink_dir: Optional[Path] = None


@dataclass
class TurnResult:
    turn_id: int
    transcript: str
    controller_raw: str = ""
    controls: list[str] = field(default_factory=list)
    expert_trace: list[ExpertCallRecord] = field(default_factory=list)
    final_text: str = ""
    segments: list[Segment] = field(default_factory=list)
    audio: Optional[ConcatResult] = None
    path: str = "full"  # stop | listen | full | failed
    timings_ms: dict[str, float] = field(default_factory=dict)
    interrupted: bool = False
    error: Optional[str] = None

    def stable_view(self) -> dict:
        """Everything except wall-clock fields, for determinism checks."""
        return {
            "turn_id": self.turn_id,
            "transcript": self.transcript,
            "controller_raw": self.controller_raw,
            "controls": list(self.controls),
            "experts": [
                {
                    "modality": r.modality,
                    "backend": r.backend_identity,
                    "outcome": r.outcome,
                    "output": r.output,
                    "cached_item_id": r.cached_item_id,
                }
                for r in self.expert_trace
            ],
            "final_text": self.final_text,
            "segments": [s.text for s in self.segments],
            "audio_duration_ms": self.audio.duration_ms if self.audio else None,
            "path": self.path,
            "interrupted": self.interrupted,
            "error": self.error,
        }


EventListener = Callable[[str, dict], None]


class Session:
    """One dialogue session owning its memory store, queue, and traces."""

    def __init__(
        self,
        session_id: str,
        store: MemoryStore,
        registry: InstructionRegistry,
        controller_backend: ControllerBackend,
        experts: ExpertPool,
        asr: AsrAdapter,
        engine: MockTtsEngine,
        config: Optional[SessionConfig] = None,
    ):
        self.id = session_id
        self.store = store
        self.registry = registry
        self.controller_backend = controller_backend
        self.experts = experts
        self.asr = asr
        self.engine = engine
        self.config = config or SessionConfig()
        self.queue = TtsQueue(session_id)
        self.state = SessionState.IDLE
        self.turn = 0
        self.traces: dict[int, TurnResult] = {}
        self.partial_query: Optional[str] = None
        self._turn_lock = threading.Lock()
        self._interrupt = threading.Event()

    # -- public API -----------------------------------------------------------

    def attach_media(
        self,
        payload: bytes,
        modality: str = "vision",
        content_type: str = "image/png",
        context: Optional[list[str]] = None,
    ) -> str:
        """Store user-provided media so experts can pick it up this dialogue."""
        import base64

        item = self.store.new_item(
            modality=modality,
            data=base64.b64encode(payload).decode("ascii"),
            content_type=content_type,
            turn_id=max(self.turn, 1) if self.store.items else 1,
            context=context or ["user_upload"],
            source="user",
        )
        # media may arrive ahead of the turn that uses it
        if self.store.items:
            item.turn_id = max(it.turn_id for it in self.store.items)
        self.store.append(item)
        return item.id

    def handle_turn(
        self,
        user_input: Union[str, bytes],
        listener: Optional[EventListener] = None,
    ) -> TurnResult:
        if not self._turn_lock.acquire(blocking=False):
            raise ModalmuxError(f"session {self.id} is already processing a turn")
        try:
            return self._handle_turn(user_input, listener or (lambda kind, payload: None))
        finally:
            self._turn_lock.release()

    def interrupt(self) -> bool:
        """Hard out-of-band interrupt; returns whether anything was active."""
        was_active = self.state in (SessionState.SPEAKING, SessionState.PROCESSING)
        self.queue.clear()
        if was_active:
            self._interrupt.set()
            self._record_interrupt_flag()
            self.state = SessionState.IDLE
            current = self.traces.get(self.turn)
            if current is not None:
                current.interrupted = True
        return was_active

    def snapshot_trace(self, turn_id: int) -> TurnResult:
        if turn_id not in self.traces:
            raise UnknownTurn(f"no trace for turn {turn_id}")
        return self.traces[turn_id]

    # -- turn pipeline --------------------------------------------------------

    def _handle_turn(self, user_input: Union[str, bytes], emit: EventListener) -> TurnResult:
        self.turn += 1
        t = self.turn
        started = time.monotonic()
        self._interrupt.clear()

        if isinstance(user_input, bytes):
            query = transcribe(self.asr, user_input)
        else:
            query = user_input
        emit("transcript", {"turn_id": t, "text": query})

        resumed_from_partial = False
        if self.state is SessionState.AWAITING_COMPLETION and self.partial_query:
            query = f"{self.partial_query} {query}"
            self.partial_query = None
            resumed_from_partial = True

        result = TurnResult(turn_id=t, transcript=query)
        self.traces[t] = result

        registry = self.registry.snapshot()
        memory_view = self.store.render_all()

        try:
            bundle = compose_prompt(query, memory_view, registry, self.config.prompt_budget)
            call = run_controller(
                self.controller_backend, bundle, self.config.controller_deadline_s
            )
        except ModalmuxError as exc:
            return self._fail_turn(result, query, t, f"controller: {exc}", emit, started)

        result.controller_raw = call.raw
        result.controls = [tok.raw for tok in call.output.controls]
        result.timings_ms["controller"] = call.latency_ms
        emit("controls", {"turn_id": t, "controls": result.controls})

        has_stop = call.output.has(TokenKind.STOP)
        has_listen = call.output.has(TokenKind.LISTEN)

        if has_stop:
            # stop dominates: silence the queue, note the interruption, keep
            # the (possibly partial) query for a resume
            result.path = "stop"
            result.interrupted = True
            self.queue.clear()
            self._append_query(query, t, partial=has_listen)
            self._record_interrupt_flag()
            if has_listen:
                self.partial_query = query
                self.state = SessionState.AWAITING_COMPLETION
            else:
                self.state = SessionState.IDLE
            result.timings_ms["total"] = (time.monotonic() - started) * 1000.0
            emit("interrupted", {"turn_id": t})
            return result

        if has_listen:
            result.path = "listen"
            self._append_query(query, t, partial=True)
            self.partial_query = query
            self.state = SessionState.AWAITING_COMPLETION
            result.timings_ms["total"] = (time.monotonic() - started) * 1000.0
            emit("turn_done", {"turn_id": t, "path": "listen"})
            return result

        # full pipeline
        if resumed_from_partial or self.state is SessionState.SPEAKING:
            self.queue.clear()
        self.state = SessionState.PROCESSING
        try:
            modalities = select_modalities(call.output.controls, registry)
        except ModalmuxError as exc:
            return self._fail_turn(result, query, t, f"selection: {exc}", emit, started)

        stage = time.monotonic()
        for m in sorted(modalities):
            emit("expert_started", {"turn_id": t, "modality": m})
        records = invoke_selected(
            modalities,
            query,
            self.store,
            self.experts,
            cache_threshold=self.config.cache_threshold,
            k=self.config.retrieval_k,
            deadline_s=self.config.expert_deadline_s,
        )
        result.expert_trace = records
        result.timings_ms["experts"] = (time.monotonic() - stage) * 1000.0
        for rec in records:
            emit(
                "expert_done",
                {
                    "turn_id": t,
                    "modality": rec.modality,
                    "outcome": rec.outcome,
                    "cached_item_id": rec.cached_item_id,
                },
            )
        if self._interrupt.is_set():
            return self._abort_interrupted(result, query, t, emit, started)

        expert_data = [(r.modality, r.output) for r in records if r.output is not None]
        fusion_view = memory_view
        if fusion_view:
            fusion_view += "\n"
        fusion_view += f"[user @ turn {t}] {query}"
        stage = time.monotonic()
        try:
            final_text, fusion_calls = integrate(
                self.controller_backend,
                FusionInput(original=call.output, expert_data=expert_data),
                fusion_view,
                deadline_s=self.config.controller_deadline_s,
            )
        except ModalmuxError as exc:
            return self._fail_turn(result, query, t, f"fusion: {exc}", emit, started)
        result.final_text = final_text.strip()
        result.timings_ms["fusion"] = (time.monotonic() - stage) * 1000.0
        emit("fusion_done", {"turn_id": t, "final_text": result.final_text})
        if self._interrupt.is_set():
            return self._abort_interrupted(result, query, t, emit, started)

        if result.final_text:
            result.segments = tts.segment(result.final_text)
            stage = time.monotonic()
            chunks = []
            stream = tts.synthesize_parallel(
                self.engine, result.segments, self.queue, self.config.tts_workers
            )
            for chunk in stream:
                seg = result.segments[chunk.index - 1]
                emit(
                    "segment",
                    {"turn_id": t, "index": seg.index, "text": seg.text,
                     "boundary": seg.boundary.value if seg.boundary else None},
                )
                emit(
                    "audio_chunk_meta",
                    {"turn_id": t, "index": chunk.index, "generation": chunk.generation,
                     "duration_ms": chunk.duration_ms, "final": chunk.final,
                     "degraded": chunk.degraded, "rate": self.engine.rate,
                     "_samples": chunk.samples},
                )
                chunks.append(chunk)
            result.timings_ms["tts"] = (time.monotonic() - stage) * 1000.0
            if self.queue.interrupted or self._interrupt.is_set():
                return self._abort_interrupted(result, query, t, emit, started)
            result.audio = tts.stream_concat(chunks, rate=self.engine.rate)
            if self.config.audio_sink_dir:
                sink = Path(self.config.audio_sink_dir)
                sink.mkdir(parents=True, exist_ok=True)
                wav_path = sink / f"{self.id}-turn{t}.wav"
                tts.write_wav(wav_path, result.audio)
                self.store.append(
                    self.store.new_item(
                        modality="audio",
                        data=str(wav_path),
                        content_type="text/uri-list",
                        turn_id=t,
                        context=["audio_out"],
                    )
                )

        self._update_memory(query, t, records, result.final_text)
        result.timings_ms["total"] = (time.monotonic() - started) * 1000.0
        self.state = SessionState.SPEAKING if result.audio is not None else SessionState.IDLE
        emit("turn_done", {"turn_id": t, "path": "full"})
        return result

    # -- helpers --------------------------------------------------------------

    def _append_query(self, query: str, turn_id: int, partial: bool = False) -> None:
        tags = sorted(terms(query))
        if partial:
            tags.append(AWAIT_TAG)
        self.store.append(
            self.store.new_item(
                modality="text", data=query, turn_id=turn_id, context=tags, source="user"
            )
        )

    def _record_interrupt_flag(self) -> None:
        turn_id = max((it.turn_id for it in self.store.items), default=1)
        turn_id = max(turn_id, self.turn if self.turn >= 1 else 1)
        self.store.append(
            self.store.new_item(
                modality="text",
                data="playback interrupted by user",
                turn_id=turn_id,
                context=[INTERRUPT_TAG],
                source="system",
            )
        )

    def _update_memory(
        self,
        query: str,
        turn_id: int,
        records: list[ExpertCallRecord],
        final_text: str,
    ) -> None:
        self._append_query(query, turn_id)
        for rec in records:
            if rec.output is None or rec.outcome == "skipped_cached":
                continue
            tags = sorted(terms(query) | terms(rec.output)) + [EXPERT_OUTPUT_TAG]
            self.store.append(
                self.store.new_item(
                    modality=rec.modality,
                    data=rec.output,
                    turn_id=turn_id,
                    context=tags,
                    source=rec.backend_identity,
                    priority=0.6,
                )
            )
        if final_text:
            self.store.append(
                self.store.new_item(
                    modality="text",
                    data=final_text,
                    turn_id=turn_id,
                    context=sorted(terms(final_text)) + ["assistant"],
                    source="assistant",
                )
            )
        try:
            self.store.compress()
        except BudgetInfeasible:
            pass  # turn still succeeds; pool left uncompressed

    def _fail_turn(
        self,
        result: TurnResult,
        query: str,
        turn_id: int,
        message: str,
        emit: EventListener,
        started: float,
    ) -> TurnResult:
        result.path = "failed"
        result.error = message
        try:
            self._append_query(query, turn_id)
            self.store.append(
                self.store.new_item(
                    modality="text",
                    data=f"turn failed: {message}",
                    turn_id=turn_id,
                    context=["turn_failure"],
                    source="system",
                )
            )
        except ModalmuxError:
            pass
        self.state = SessionState.IDLE
        result.timings_ms["total"] = (time.monotonic() - started) * 1000.0
        emit("turn_failed", {"turn_id": turn_id, "error": message})
        return result

    def _abort_interrupted(
        self,
        result: TurnResult,
        query: str,
        turn_id: int,
        emit: EventListener,
        started: float,
    ) -> TurnResult:
        result.interrupted = True
        result.path = "full"
        try:
            self._append_query(query, turn_id)
        except ModalmuxError:
            pass
        self.state = SessionState.IDLE
        result.timings_ms["total"] = (time.monotonic() - started) * 1000.0
        emit("interrupted", {"turn_id": turn_id})
        return result
