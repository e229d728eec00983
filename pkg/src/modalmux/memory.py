"""Cross-modal memory pool: structured records, retrieval, and compression.

Each record is one JSON object (see RECORD_SCHEMA) holding a modality-tagged
payload plus provenance metadata. Stores are per-session and append-only:
corrections and summaries are new items that reference old ids, nothing is
edited in place. When the rendered pool grows past its budget, compression
keeps the most recent turns verbatim and folds older items into rule-based
summary items that reference what they replaced.
"""

from __future__ import annotations

import base64
import json
import re
import threading
import uuid
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

import jsonschema

from .errors import BudgetInfeasible, SchemaViolation, TurnOrderViolation

RECORD_SCHEMA = {
    "type": "object",
    "required": ["id", "modality", "content", "turn_id", "references", "priority", "compression"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "modality": {"type": "string", "pattern": "^[a-z0-9_]+$"},
        "content": {
            "type": "object",
            "required": ["type", "data", "metadata"],
            "additionalProperties": False,
            "properties": {
                "type": {"type": "string"},
                "data": {"type": "string"},
                "embedding": {
                    "type": ["array", "null"],
                    "items": {"type": "number"},
                },
                "metadata": {
                    "type": "object",
                    "required": ["source", "timestamp", "context"],
                    "additionalProperties": False,
                    "properties": {
                        "source": {"type": "string"},
                        "timestamp": {"type": "string"},
                        "context": {"type": "array", "items": {"type": "string"}},
                    },
                },
            },
        },
        "turn_id": {"type": "integer", "minimum": 1},
        "references": {"type": "array", "items": {"type": "string"}},
        "priority": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "compression": {
            "type": "object",
            "required": ["algorithm", "ratio"],
            "additionalProperties": False,
            "properties": {
                "algorithm": {"type": ["string", "null"]},
                "ratio": {"type": ["number", "null"], "exclusiveMinimum": 0.0},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(RECORD_SCHEMA)

STOPWORDS = frozenset(
    """a an and are as at be but by for from has have how i in is it its many of on or
    that the there this to was we were what when where which who will with you your
    me my it's im i'm do does did can could should would please""".split()
)

_WORD_RE = re.compile(r"[a-z0-9']+")


def terms(text: str) -> set[str]:
    """Lowercased content words of a text, stopwords removed."""
    return {w for w in _WORD_RE.findall(text.lower()) if w not in STOPWORDS}


def jaccard(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def containment(query: set[str], tags: set[str]) -> float:
    """Fraction of query terms covered by tags."""
    if not query:
        return 0.0
    return len(query & tags) / len(query)


@dataclass
class MemoryItem:
    """One structured record in the pool."""

    id: str
    modality: str
    content_type: str
    data: str
    turn_id: int
    source: str = "system"
    timestamp: str = ""
    context: list[str] = field(default_factory=list)
    embedding: Optional[list[float]] = None
    references: list[str] = field(default_factory=list)
    priority: float = 0.5
    compression_algorithm: Optional[str] = None
    compression_ratio: Optional[float] = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "modality": self.modality,
            "content": {
                "type": self.content_type,
                "data": self.data,
                "embedding": self.embedding,
                "metadata": {
                    "source": self.source,
                    "timestamp": self.timestamp,
                    "context": list(self.context),
                },
            },
            "turn_id": self.turn_id,
            "references": list(self.references),
            "priority": self.priority,
            "compression": {
                "algorithm": self.compression_algorithm,
                "ratio": self.compression_ratio,
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "MemoryItem":
        validate_record(record)
        content = record["content"]
        meta = content["metadata"]
        return cls(
            id=record["id"],
            modality=record["modality"],
            content_type=content["type"],
            data=content["data"],
            embedding=content.get("embedding"),
            source=meta["source"],
            timestamp=meta["timestamp"],
            context=list(meta["context"]),
            turn_id=record["turn_id"],
            references=list(record["references"]),
            priority=record["priority"],
            compression_algorithm=record["compression"]["algorithm"],
            compression_ratio=record["compression"]["ratio"],
        )

    def payload_text(self) -> str:
        """Human-readable payload for prompts: text verbatim, blobs by type."""
        if self.content_type.startswith("text/"):
            return self.data
        return f"<{self.content_type} payload>"

    def is_text(self) -> bool:
        return self.content_type.startswith("text/")


def validate_record(record: dict) -> list[str]:
    """Raise SchemaViolation with all field-level problems, or return []."""
    problems = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in _VALIDATOR.iter_errors(record)
    ]
    if problems:
        raise SchemaViolation("; ".join(problems))
    return problems


def record_violations(record: dict) -> list[str]:
    """Like validate_record but collects instead of raising."""
    return [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in _VALIDATOR.iter_errors(record)
    ]


@dataclass
class RetrievalResult:
    items: list[MemoryItem]
    scores: list[float]

    def rendered(self, budget: int = 10**9) -> str:
        return render(self, budget)


def _render_block(item: MemoryItem) -> str:
    return f"[{item.modality} @ turn {item.turn_id}] {item.payload_text()}"


def render(result: RetrievalResult, budget: int) -> str:
    """Prompt-ready text: one block per item, lowest scores dropped first."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    keep = list(zip(result.items, result.scores))
    while keep:
        text = "\n".join(_render_block(it) for it, _ in keep)
        if len(text) <= budget:
            return text
        keep.pop(min(range(len(keep)), key=lambda i: keep[i][1]))
    return ""


DEFAULT_WEIGHTS = (0.4, 0.3, 0.3)  # recency, priority, lexical overlap
AT_REST_THRESHOLD = 4096


class MemoryStore:
    """Per-session ordered pool of MemoryItems with a rendered-size budget.

    Single writer, many readers; compression takes the write lock for its
    whole pass. Optionally persists one record per line (UTF-8 JSON) and
    replays the file on open.
    """

    def __init__(
        self,
        session_id: str,
        budget: int = 8000,
        keep_recent_turns: int = 2,
        path: Optional[Path] = None,
        id_factory: Optional[Callable[[], str]] = None,
        clock: Optional[Callable[[], datetime]] = None,
        at_rest_compression: bool = True,
    ):
        self.session_id = session_id
        self.budget = budget
        self.keep_recent_turns = keep_recent_turns
        self.path = Path(path) if path else None
        self.id_factory = id_factory or (lambda: str(uuid.uuid4()))
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.at_rest_compression = at_rest_compression
        self.items: list[MemoryItem] = []
        self.retired: set[str] = set()  # ids folded into summaries by compress
        self.hits: dict[str, int] = {}
        self._lock = threading.RLock()
        if self.path and self.path.exists():
            self._replay()

    # -- construction helpers -------------------------------------------------

    def new_item(
        self,
        modality: str,
        data: str,
        turn_id: int,
        content_type: str = "text/plain",
        context: Optional[list[str]] = None,
        references: Optional[list[str]] = None,
        priority: float = 0.5,
        source: str = "system",
    ) -> MemoryItem:
        return MemoryItem(
            id=self.id_factory(),
            modality=modality,
            content_type=content_type,
            data=data,
            turn_id=turn_id,
            source=source,
            timestamp=self.clock().isoformat(),
            context=context if context is not None else sorted(terms(data)),
            references=references or [],
            priority=priority,
        )

    # -- core operations ------------------------------------------------------

    def append(self, item: MemoryItem) -> MemoryItem:
        with self._lock:
            validate_record(item.to_record())
            if any(it.id == item.id for it in self.items):
                raise SchemaViolation(f"duplicate id {item.id}")
            if self.items and item.turn_id < max(it.turn_id for it in self.items):
                raise TurnOrderViolation(
                    f"turn_id {item.turn_id} precedes existing turn "
                    f"{max(it.turn_id for it in self.items)}"
                )
            item = self._compress_at_rest(item)
            self.items.append(item)
            if self.path:
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(json.dumps(item.to_record()) + "\n")
            return item

    def retrieve(
        self,
        modality: str,
        query: str,
        k: int,
        weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    ) -> RetrievalResult:
        """Top-k items of a modality by recency + priority + lexical overlap."""
        if k < 1:
            raise ValueError("k must be >= 1")
        w_r, w_p, w_l = weights
        with self._lock:
            pool = [it for it in self.items if it.modality == modality]
            if not pool:
                return RetrievalResult([], [])
            max_turn = max(it.turn_id for it in pool)
            q_terms = terms(query)

            def score(it: MemoryItem) -> float:
                recency = it.turn_id / max_turn
                overlap_terms = set(t.lower() for t in it.context)
                if it.is_text():
                    overlap_terms |= terms(it.data)
                return w_r * recency + w_p * it.priority + w_l * jaccard(q_terms, overlap_terms)

            ranked = sorted(pool, key=lambda it: (-score(it), -it.turn_id, it.id))[:k]
            for it in ranked:
                self.hits[it.id] = self.hits.get(it.id, 0) + 1
            return RetrievalResult(ranked, [score(it) for it in ranked])

    def rendered_size(self, items: Optional[Iterable[MemoryItem]] = None) -> int:
        pool = list(items) if items is not None else self.items
        if not pool:
            return 0
        return len("\n".join(_render_block(it) for it in pool))

    def render_all(self, budget: Optional[int] = None) -> str:
        """The whole pool as prompt context, oldest first."""
        with self._lock:
            text = "\n".join(_render_block(it) for it in self.items)
        limit = budget if budget is not None else self.budget
        if len(text) > limit:
            # truncate oldest-first: keep the tail
            text = text[-limit:]
        return text

    def compress(self) -> dict:
        """Shrink the pool under budget; returns a report dict.

        Recent turns stay verbatim; older items are scored on relevance to
        kept content, modality diversity, recency, and retrieval frequency,
        and the weakest are folded into summary items.
        """
        with self._lock:
            before = self.rendered_size()
            if before <= self.budget:
                return {"compressed": False, "size": before, "summaries": []}

            turn_ids = sorted({it.turn_id for it in self.items})
            recent = set(turn_ids[-self.keep_recent_turns:])
            kept = [it for it in self.items if it.turn_id in recent]
            old = [it for it in self.items if it.turn_id not in recent]

            if self.rendered_size(kept) > self.budget:
                raise BudgetInfeasible(
                    f"last {self.keep_recent_turns} turns render to "
                    f"{self.rendered_size(kept)} > budget {self.budget}"
                )

            kept_terms: list[set[str]] = [
                terms(it.data) | set(t.lower() for t in it.context) for it in kept
            ]
            max_turn = max(turn_ids)
            max_hits = max([self.hits.get(it.id, 0) for it in old] + [1])
            last_of_modality = {}
            for it in old:
                last_of_modality[it.modality] = it.id

            def keep_score(it: MemoryItem) -> float:
                own = terms(it.data) | set(t.lower() for t in it.context)
                relevance = max((jaccard(own, ks) for ks in kept_terms), default=0.0)
                diversity = 1.0 if last_of_modality[it.modality] == it.id else 0.0
                recency = it.turn_id / max_turn
                freq = self.hits.get(it.id, 0) / max_hits
                return 0.25 * (relevance + diversity + recency + freq)

            summaries: list[MemoryItem] = []
            survivors = list(old)
            ranked = sorted(survivors, key=lambda it: (keep_score(it), it.turn_id, it.id))
            batch: list[MemoryItem] = []
            while ranked:
                batch.append(ranked.pop(0))
                summary = self._summarize(batch)
                trial = [it for it in survivors if it not in batch] + [summary] + kept
                if self.rendered_size(trial) <= self.budget:
                    summaries.append(summary)
                    survivors = [it for it in survivors if it not in batch]
                    break
            else:
                if batch:
                    summary = self._summarize(batch)
                    summaries.append(summary)
                    survivors = []

            new_items = survivors + summaries + kept
            new_items.sort(key=lambda it: it.turn_id)
            after = self.rendered_size(new_items)
            if after > self.budget:
                raise BudgetInfeasible(
                    f"compressed pool still renders to {after} > budget {self.budget}"
                )
            self.items = new_items
            self.retired |= {r for s in summaries for r in s.references}
            if self.path:
                self._rewrite()
            return {
                "compressed": True,
                "size": after,
                "summaries": [s.id for s in summaries],
            }

    def consistency_report(self) -> dict:
        """Dangling references are flagged, never fatal."""
        with self._lock:
            known = {it.id for it in self.items} | self.retired
            dangling = sorted(
                {r for it in self.items for r in it.references if r not in known}
            )
            return {"items": len(self.items), "dangling_references": dangling}

    # -- internals ------------------------------------------------------------

    def _summarize(self, batch: list[MemoryItem]) -> MemoryItem:
        """Rule-based summary: first sentence plus salient entities per item."""
        pieces = []
        tags: set[str] = {"summary"}
        for it in batch:
            text = it.payload_text()
            first = re.split(r"(?<=[.!?])\s+", text.strip())[0]
            entities = re.findall(r"\b(?:[A-Z][a-z]+|\d+)\b", text)
            piece = first
            extra = [e for e in entities if e not in first]
            if extra:
                piece += " (" + ", ".join(dict.fromkeys(extra)) + ")"
            pieces.append(f"{it.modality}@{it.turn_id}: {piece}")
            tags |= set(it.context)
        body = " | ".join(pieces)
        if len(body) > 400:
            body = body[:397] + "..."
        return MemoryItem(
            id=self.id_factory(),
            modality="text",
            content_type="text/plain",
            data=body,
            turn_id=max(it.turn_id for it in batch),
            source="compressor",
            timestamp=self.clock().isoformat(),
            context=sorted(tags),
            references=[it.id for it in batch],
            priority=max(it.priority for it in batch),
        )

    def _compress_at_rest(self, item: MemoryItem) -> MemoryItem:
        if not self.at_rest_compression or item.compression_algorithm:
            return item
        raw = item.data.encode("utf-8")
        if len(raw) <= AT_REST_THRESHOLD or item.is_text():
            return item
        packed = zlib.compress(raw)
        if len(packed) >= len(raw):
            return item
        return replace(
            item,
            data=base64.b64encode(packed).decode("ascii"),
            compression_algorithm="zlib",
            compression_ratio=len(raw) / len(packed),
        )

    @staticmethod
    def decompress_payload(item: MemoryItem) -> bytes:
        raw = item.data.encode("utf-8")
        if item.compression_algorithm == "zlib":
            return zlib.decompress(base64.b64decode(item.data))
        return raw

    def _replay(self) -> None:
        with self.path.open(encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    self.items.append(MemoryItem.from_record(json.loads(line)))

    def _rewrite(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as f:
            for it in self.items:
                f.write(json.dumps(it.to_record()) + "\n")
        tmp.replace(self.path)

    def save(self, path: Path) -> None:
        with self._lock:
            with Path(path).open("w", encoding="utf-8") as f:
                for it in self.items:
                    f.write(json.dumps(it.to_record()) + "\n")
