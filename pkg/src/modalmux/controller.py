"""Controller pass: prompt composition, backend invocation, and fusion.

The controller model sees the instruction table, a rendered memory excerpt,
and the user query, and answers in "control token + content" form. When
experts contributed data, a second pass embeds their outputs as labeled
evidence and must come back with no control tokens at all.
"""

from __future__ import annotations

import concurrent.futures
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import httpx

from .errors import BackendError, BackendTimeout, BudgetExceeded, ControlTokenLeak
from .protocol import ControllerOutput, InstructionRegistry, TokenKind, split_tokens

DEFAULT_PROMPT_BUDGET = 6000
DEFAULT_DEADLINE_S = 30.0

_SYSTEM_HEADER = (
    "You are the session controller coordinating a team of specialized expert models.\n"
    "Decide what the turn needs and reply in the mandated format:\n"
    "Special Control Token + Response Content. Any other format is rejected.\n"
    "Available control tokens:\n"
)

_FUSION_HEADER = (
    "You are the session controller. Expert models have already run; their findings\n"
    "are quoted below as evidence. Write the final spoken reply to the user using\n"
    "that evidence. Output plain text only: control tokens are forbidden here.\n"
)


@dataclass(frozen=True)
class PromptBundle:
    """Deterministic function of (query, memory view, registry)."""

    system: str
    context: str
    query: str


def compose_prompt(
    query: str,
    memory_view: str,
    registry: InstructionRegistry,
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> PromptBundle:
    """Build the first-pass bundle; memory is truncated oldest-first to fit."""
    lines = [_SYSTEM_HEADER]
    for entry in registry.entries.values():
        lines.append(f"  {entry.raw} - {entry.description}\n")
    system = "".join(lines)
    fixed = len(system) + len(query)
    if fixed > budget:
        raise BudgetExceeded(f"system + query is {fixed} chars, budget {budget}")
    room = budget - fixed
    context = memory_view
    if len(context) > room:
        context = context[len(context) - room:]  # oldest-first truncation
    return PromptBundle(system=system, context=context, query=query)


@runtime_checkable
class ControllerBackend(Protocol):
    identity: str

    def generate(self, bundle: PromptBundle) -> str: ...


@dataclass
class ControllerCall:
    """One backend invocation with its parse and timing, for the turn trace."""

    raw: str
    output: ControllerOutput
    latency_ms: float


def _call_with_deadline(backend: ControllerBackend, bundle: PromptBundle, deadline_s: float) -> str:
    with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
        future = pool.submit(backend.generate, bundle)
        try:
            return future.result(timeout=deadline_s)
        except concurrent.futures.TimeoutError:
            future.cancel()
            raise BackendTimeout(
                f"controller backend {backend.identity!r} exceeded {deadline_s}s"
            ) from None
        except BackendError:
            raise
        except Exception as exc:  # transport/status failures become BackendError
            raise BackendError(f"controller backend {backend.identity!r}: {exc}") from exc


def run_controller(
    backend: ControllerBackend,
    bundle: PromptBundle,
    deadline_s: float = DEFAULT_DEADLINE_S,
) -> ControllerCall:
    started = time.monotonic()
    raw = _call_with_deadline(backend, bundle, deadline_s)
    latency_ms = (time.monotonic() - started) * 1000.0
    return ControllerCall(raw=raw, output=split_tokens(raw), latency_ms=latency_ms)


@dataclass
class FusionInput:
    original: ControllerOutput
    expert_data: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        needed = {t.modality for t in self.original.controls if t.kind is TokenKind.NEED}
        for modality, _ in self.expert_data:
            if modality not in needed:
                raise ValueError(f"evidence modality {modality!r} was never requested")


def evidence_block(expert_data: list[tuple[str, str]]) -> str:
    lines = ["Expert evidence:"]
    for modality, data in expert_data:
        lines.append(f"[{modality}] {data}")
    return "\n".join(lines)


def integrate(
    backend: ControllerBackend,
    fusion: FusionInput,
    memory_view: str,
    deadline_s: float = DEFAULT_DEADLINE_S,
) -> tuple[str, list[ControllerCall]]:
    """Fuse expert evidence into the final reply text.

    Identity when no expert ran. Otherwise a second controller pass; one
    retry if the reply leaks control tokens, then ControlTokenLeak.
    """
    if not fusion.expert_data:
        return fusion.original.content, []

    context = memory_view
    if context:
        context += "\n"
    context += evidence_block(fusion.expert_data)
    bundle = PromptBundle(
        system=_FUSION_HEADER,
        context=context,
        query=fusion.original.content.strip(),
    )
    calls: list[ControllerCall] = []
    for _attempt in range(2):
        call = run_controller(backend, bundle, deadline_s=deadline_s)
        calls.append(call)
        if not call.output.controls:
            return call.output.content.strip(), calls
    raise ControlTokenLeak("fused reply still contained control tokens after one retry")


# --- backends ----------------------------------------------------------------


class ScriptedBackend:
    """Deterministic table-driven backend for tests and offline scenarios.

    Entries are (regex, canned reply); first match wins. Patterns are
    matched against a "QUERY: ...\\nCONTEXT: ..." rendering of the bundle
    with IGNORECASE, MULTILINE and DOTALL.
    """

    _FLAGS = re.IGNORECASE | re.MULTILINE | re.DOTALL

    def __init__(self, entries: list[tuple[str, str]], identity: str = "scripted"):
        self.identity = identity
        self.entries = [(re.compile(p, self._FLAGS), r) for p, r in entries]
        self.calls = 0

    @classmethod
    def from_table_file(cls, path: Path, identity: str = "scripted") -> "ScriptedBackend":
        table = load_mock_table(path)
        return cls([(e["match"], e["respond"]) for e in table["entries"]], identity=identity)

    def match_text(self, bundle: PromptBundle) -> str:
        return f"QUERY: {bundle.query}\nCONTEXT: {bundle.context}"

    def generate(self, bundle: PromptBundle) -> str:
        self.calls += 1
        text = self.match_text(bundle)
        for pattern, reply in self.entries:
            if pattern.search(text):
                return reply
        raise BackendError(f"scripted backend {self.identity!r} has no entry for: {text[:80]!r}")


def load_mock_table(path: Path) -> dict:
    """Load and sanity-check a pattern table file."""
    path = Path(path)
    table = json.loads(path.read_text(encoding="utf-8"))
    entries = table.get("entries")
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: table needs a nonempty 'entries' list")
    probe = "zq__improbable_probe__zq"
    has_catch_all = False
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "match" not in entry or "respond" not in entry:
            raise ValueError(f"{path}: entry {i} needs 'match' and 'respond'")
        compiled = re.compile(entry["match"], ScriptedBackend._FLAGS)
        if compiled.search(f"QUERY: {probe}\nCONTEXT: {probe}"):
            has_catch_all = True
    if not has_catch_all:
        raise ValueError(f"{path}: no catch-all entry (one pattern must match anything)")
    return table


class HttpChatBackend:
    """Chat-completions style remote backend.

    POSTs {model, messages, temperature} to ``base_url`` and reads
    choices[0].message.content back.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        temperature: float = 0.0,
        identity: Optional[str] = None,
        timeout_s: float = DEFAULT_DEADLINE_S,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.identity = identity or f"http:{model}"
        self.timeout_s = timeout_s
        self._client = client

    def generate(self, bundle: PromptBundle) -> str:
        messages = [{"role": "system", "content": bundle.system}]
        if bundle.context:
            messages.append({"role": "system", "content": bundle.context})
        messages.append({"role": "user", "content": bundle.query})
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        post = self._client.post if self._client is not None else httpx.post
        try:
            response = post(
                f"{self.base_url}/chat/completions",
                json={
                    "model": self.model,
                    "messages": messages,
                    "temperature": self.temperature,
                },
                headers=headers,
                timeout=self.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"{self.identity}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"{self.identity}: {exc}") from exc
        if response.status_code != 200:
            raise BackendError(f"{self.identity}: HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"{self.identity}: malformed response body") from exc
