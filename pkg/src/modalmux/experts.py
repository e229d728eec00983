"""Expert backends: per-modality invocation, caching, and speech recognition.

An expert turns (query, rendered memory context, optional raw media) into a
plain-text data unit. Before calling out, the dispatcher checks whether a
prior expert output from this dialogue already answers the query; on a hit
the backend is skipped entirely and the cached payload is reused.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

from .errors import (
    BackendError,
    BackendTimeout,
    DuplicateBackend,
    NoBackend,
    TranscriptionFailure,
)
from .memory import MemoryStore, containment, terms
from .protocol import InstructionRegistry

DEFAULT_CACHE_THRESHOLD = 0.3
DEFAULT_EXPERT_DEADLINE_S = 60.0
EXPERT_OUTPUT_TAG = "expert_output"


@runtime_checkable
class ExpertBackend(Protocol):
    modality: str
    identity: str

    def invoke(self, query: str, context: str, media: list[bytes]) -> str: ...

    def health(self) -> bool: ...


@dataclass
class ExpertCallRecord:
    modality: str
    backend_identity: str
    latency_ms: float
    input_digest: str
    output: Optional[str]
    outcome: str  # ok | timeout | error | skipped_cached
    cached_item_id: Optional[str] = None
    error: Optional[str] = None


class MockExpertBackend:
    """Pure pattern-table expert; counts calls so tests can assert on them."""

    _FLAGS = re.IGNORECASE | re.MULTILINE | re.DOTALL

    def __init__(self, modality: str, entries: list[tuple[str, str]], identity: str = "mock"):
        self.modality = modality
        self.identity = identity
        self.entries = [(re.compile(p, self._FLAGS), r) for p, r in entries]
        self.calls = 0

    def invoke(self, query: str, context: str, media: list[bytes]) -> str:
        self.calls += 1
        text = f"QUERY: {query}\nCONTEXT: {context}"
        for pattern, reply in self.entries:
            if pattern.search(text):
                return reply
        raise BackendError(f"mock {self.modality} expert has no entry for {query!r}")

    def health(self) -> bool:
        return True


class ExpertPool:
    """Registered backends per modality, in registration order."""

    def __init__(self):
        self._backends: dict[str, list[ExpertBackend]] = {}
        self._order: list[str] = []

    def register(
        self,
        modality: str,
        backend: ExpertBackend,
        registry: Optional[InstructionRegistry] = None,
    ) -> None:
        existing = self._backends.setdefault(modality, [])
        if any(b.identity == backend.identity for b in existing):
            raise DuplicateBackend(f"({modality}, {backend.identity}) already registered")
        existing.append(backend)
        if modality not in self._order:
            self._order.append(modality)
        if registry is not None:
            raw = f"[S.need_{modality}]"
            if raw not in registry.entries:
                registry.register(raw, f"Route the query to the {modality} expert.")

    def active(self, modality: str) -> ExpertBackend:
        backends = self._backends.get(modality)
        if not backends:
            raise NoBackend(f"no backend registered for modality {modality!r}")
        return backends[0]

    def registration_order(self, modalities: set[str]) -> list[str]:
        ordered = [m for m in self._order if m in modalities]
        # modalities never registered still get a deterministic position
        ordered += sorted(modalities - set(self._order))
        return ordered


def invoke_modality(
    modality: str,
    query: str,
    store: MemoryStore,
    pool: ExpertPool,
    k: int = 3,
    cache_threshold: float = DEFAULT_CACHE_THRESHOLD,
    deadline_s: float = DEFAULT_EXPERT_DEADLINE_S,
) -> ExpertCallRecord:
    """Retrieve context, reuse a cached expert output if possible, else call out.

    The memory write of the produced data unit is the orchestrator's job,
    not ours.
    """
    backend = pool.active(modality)  # NoBackend propagates before any retrieval
    result = store.retrieve(modality, query, k)
    context = result.rendered()
    digest = hashlib.sha256(f"{modality}|{query}|{context}".encode()).hexdigest()[:16]

    q_terms = terms(query)
    for item in result.items:
        if EXPERT_OUTPUT_TAG not in item.context:
            continue
        tags = set(t.lower() for t in item.context)
        if item.is_text():
            tags |= terms(item.data)
        if containment(q_terms, tags) >= cache_threshold:
            return ExpertCallRecord(
                modality=modality,
                backend_identity=backend.identity,
                latency_ms=0.0,
                input_digest=digest,
                output=item.payload_text(),
                outcome="skipped_cached",
                cached_item_id=item.id,
            )

    media: list[bytes] = []
    for item in reversed(result.items):
        if not item.is_text():
            media.append(MemoryStore.decompress_payload(item))
            break

    started = time.monotonic()
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=1) as executor:
            future = executor.submit(backend.invoke, query, context, media)
            output = future.result(timeout=deadline_s)
        latency = (time.monotonic() - started) * 1000.0
        return ExpertCallRecord(modality, backend.identity, latency, digest, output, "ok")
    except concurrent.futures.TimeoutError:
        latency = (time.monotonic() - started) * 1000.0
        return ExpertCallRecord(
            modality, backend.identity, latency, digest, None, "timeout",
            error=f"deadline {deadline_s}s exceeded",
        )
    except Exception as exc:
        latency = (time.monotonic() - started) * 1000.0
        return ExpertCallRecord(
            modality, backend.identity, latency, digest, None, "error", error=str(exc),
        )


def invoke_selected(
    modalities: set[str],
    query: str,
    store: MemoryStore,
    pool: ExpertPool,
    max_parallel: Optional[int] = None,
    **kwargs,
) -> list[ExpertCallRecord]:
    """Fan out over selected modalities concurrently.

    One modality failing never aborts the others; results come back in
    backend registration order so fusion prompts are deterministic.
    """
    ordered = pool.registration_order(modalities)
    if not ordered:
        return []
    workers = max_parallel or len(ordered)
    records: dict[str, ExpertCallRecord] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {
            executor.submit(invoke_modality, m, query, store, pool, **kwargs): m
            for m in ordered
        }
        for future, modality in futures.items():
            try:
                records[modality] = future.result()
            except NoBackend as exc:
                records[modality] = ExpertCallRecord(
                    modality, "-", 0.0, "-", None, "error", error=str(exc),
                )
    return [records[m] for m in ordered]


# --- speech recognition ------------------------------------------------------


@runtime_checkable
class AsrAdapter(Protocol):
    def transcribe(self, payload: bytes) -> str: ...


TEXT_LABEL_PREFIX = b"TEXT:"


def make_labeled_audio(text: str) -> bytes:
    """Synthetic test payload carrying its own transcript."""
    return TEXT_LABEL_PREFIX + text.encode("utf-8")


class MockAsrAdapter:
    """Identity on text-labeled synthetic payloads."""

    identity = "mock-asr"

    def transcribe(self, payload: bytes) -> str:
        if not payload:
            raise TranscriptionFailure("empty audio payload")
        if payload.startswith(TEXT_LABEL_PREFIX):
            return payload[len(TEXT_LABEL_PREFIX):].decode("utf-8").strip()
        raise TranscriptionFailure("mock adapter only accepts text-labeled payloads")


def transcribe(adapter: AsrAdapter, payload: bytes) -> str:
    if not payload:
        raise TranscriptionFailure("empty audio payload")
    return adapter.transcribe(payload)
