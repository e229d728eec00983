"""Control-token grammar: parsing controller output and selecting modalities.

A control token looks like ``[S.stop]`` or ``[S.need_vision]``. The fixed
verbs are ``stop``, ``listen`` and ``speak``; the ``need_<modality>`` family
is open-ended so new expert modalities can be plugged in without touching the
parser. Everything else between tokens is plain content. This module never
interprets content, only brackets.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import BuiltinOverride, DuplicateToken, MalformedToken, UnknownModality

# Bracketed candidate: [S.<name>] with name over [a-z0-9_]+
TOKEN_RE = re.compile(r"\[S\.([a-z0-9_]+)\]")
NEED_PREFIX = "need_"
MODALITY_RE = re.compile(r"[a-z0-9_]+")

_VERBS = ("stop", "listen", "speak")


class TokenKind(Enum):
    STOP = "stop"
    LISTEN = "listen"
    SPEAK = "speak"
    NEED = "need"


@dataclass(frozen=True)
class ControlToken:
    """One parsed control instruction."""

    kind: TokenKind
    raw: str
    modality: Optional[str] = None

    def __post_init__(self):
        if self.kind is TokenKind.NEED:
            if not self.modality or not MODALITY_RE.fullmatch(self.modality):
                raise MalformedToken(f"need token requires a modality name: {self.raw!r}")
        elif self.modality is not None:
            raise MalformedToken(f"{self.kind.value} token carries no modality: {self.raw!r}")


def _token_from_name(name: str) -> Optional[ControlToken]:
    """Map a bracket name to a ControlToken, or None if unrecognized."""
    raw = f"[S.{name}]"
    if name in _VERBS:
        return ControlToken(kind=TokenKind(name), raw=raw)
    if name.startswith(NEED_PREFIX):
        modality = name[len(NEED_PREFIX):]
        if modality and MODALITY_RE.fullmatch(modality):
            return ControlToken(kind=TokenKind.NEED, raw=raw, modality=modality)
    return None


@dataclass
class ControllerOutput:
    """Controller text split into content and control tokens.

    ``parts`` preserves the original interleaving (including repeated
    tokens) so the source text can be reassembled byte-for-byte;
    ``controls`` is the deduplicated token list with repeat counts kept
    in ``duplicates`` for diagnostics.
    """

    raw: str
    content: str
    controls: list[ControlToken]
    parts: list[tuple[str, str]] = field(default_factory=list)
    duplicates: dict[str, int] = field(default_factory=dict)
    unknown_tokens: list[str] = field(default_factory=list)

    def reassemble(self) -> str:
        return "".join(text for _, text in self.parts)

    def has(self, kind: TokenKind) -> bool:
        return any(tok.kind is kind for tok in self.controls)

    def controls_are_prefix(self) -> bool:
        """True when every control token precedes all content.

        The controller contract asks for control tokens up front; the
        parser accepts any placement, this check flags stragglers.
        """
        seen_content = False
        for part_kind, text in self.parts:
            if part_kind == "content":
                if text.strip():
                    seen_content = True
            elif seen_content:
                return False
        return True


def split_tokens(raw: str) -> ControllerOutput:
    """Split controller text into content and control tokens.

    Total function: malformed brackets and unrecognized ``[S.xxx]``
    spellings stay in the content verbatim (the latter are reported in
    ``unknown_tokens``).
    """
    parts: list[tuple[str, str]] = []
    controls: list[ControlToken] = []
    counts: dict[str, int] = {}
    unknown: list[str] = []
    content_pieces: list[str] = []

    pos = 0
    for match in TOKEN_RE.finditer(raw):
        token = _token_from_name(match.group(1))
        if token is None:
            unknown.append(match.group(0))
            continue
        if match.start() > pos:
            chunk = raw[pos:match.start()]
            parts.append(("content", chunk))
            content_pieces.append(chunk)
        parts.append(("control", token.raw))
        counts[token.raw] = counts.get(token.raw, 0) + 1
        if counts[token.raw] == 1:
            controls.append(token)
        pos = match.end()
    if pos < len(raw):
        chunk = raw[pos:]
        parts.append(("content", chunk))
        content_pieces.append(chunk)

    duplicates = {r: c for r, c in counts.items() if c > 1}
    return ControllerOutput(
        raw=raw,
        content="".join(content_pieces),
        controls=controls,
        parts=parts,
        duplicates=duplicates,
        unknown_tokens=unknown,
    )


@dataclass(frozen=True)
class InstructionEntry:
    raw: str
    description: str
    modality: Optional[str]
    builtin: bool


_BUILTIN_ENTRIES = [
    InstructionEntry("[S.stop]", "Cancel any speech in progress and end this turn immediately.", None, True),
    InstructionEntry("[S.listen]", "Hold the reply and keep listening; the user's utterance is incomplete.", None, True),
    InstructionEntry("[S.speak]", "Answer directly with spoken content; no expert needed.", None, True),
    InstructionEntry("[S.need_vision]", "Route the query to the image understanding expert.", "vision", True),
    InstructionEntry("[S.need_reasoning]", "Route the query to the analytical reasoning expert.", "reasoning", True),
]


class InstructionRegistry:
    """Runtime table of recognized instructions and their modalities.

    Builtins are always present and cannot be replaced. Writes are
    serialized; ``snapshot()`` hands out an immutable copy for the
    duration of a turn.
    """

    def __init__(self, entries: Optional[dict[str, InstructionEntry]] = None):
        self._lock = threading.Lock()
        if entries is not None:
            self._entries = dict(entries)
        else:
            self._entries = {e.raw: e for e in _BUILTIN_ENTRIES}

    @property
    def entries(self) -> dict[str, InstructionEntry]:
        return dict(self._entries)

    def register(self, raw: str, description: str, modality: Optional[str] = None) -> None:
        match = TOKEN_RE.fullmatch(raw)
        if match is None:
            raise MalformedToken(f"not a [S.name] token: {raw!r}")
        name = match.group(1)
        if name in _VERBS:
            raise BuiltinOverride(f"{raw} is a builtin and cannot be re-registered")
        if not name.startswith(NEED_PREFIX):
            raise MalformedToken(f"only the need_<modality> family is extensible: {raw!r}")
        inferred = name[len(NEED_PREFIX):]
        if modality is None:
            modality = inferred
        elif modality != inferred:
            raise MalformedToken(
                f"token {raw} names modality {inferred!r} but {modality!r} was given"
            )
        with self._lock:
            if raw in self._entries:
                if self._entries[raw].builtin:
                    raise BuiltinOverride(f"{raw} is a builtin and cannot be re-registered")
                raise DuplicateToken(f"{raw} is already registered")
            self._entries[raw] = InstructionEntry(raw, description, modality, builtin=False)

    def resolve_modality(self, token: ControlToken) -> str:
        if token.kind is not TokenKind.NEED:
            raise UnknownModality(f"{token.raw} does not select a modality")
        entry = self._entries.get(token.raw)
        if entry is None or entry.modality is None:
            raise UnknownModality(f"no registered modality for {token.raw}")
        return entry.modality

    def known_modalities(self) -> list[str]:
        """Modalities in registration order."""
        return [e.modality for e in self._entries.values() if e.modality is not None]

    def snapshot(self) -> "InstructionRegistry":
        with self._lock:
            return InstructionRegistry(entries=self._entries)


def select_modalities(controls: list[ControlToken], registry: InstructionRegistry) -> set[str]:
    """The set of expert modalities the controller asked for.

    Empty when no need-token is present. Raises UnknownModality when a
    need-token cannot be resolved against the registry at dispatch time.
    """
    selected: set[str] = set()
    for token in controls:
        if token.kind is TokenKind.NEED:
            selected.add(registry.resolve_modality(token))
    return selected
