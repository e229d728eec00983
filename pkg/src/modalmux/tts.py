"""Speech pipeline: segmentation, parallel synthesis, and ordered streaming.

Text is cut into 7-15 word segments at punctuation, discourse markers, and
approximate syntactic boundaries. All segments of an utterance are synthesized
concurrently, but audio is released strictly in segment order so playback can
start at the first finished chunk. The queue is generation-tagged: clearing it
bumps the generation and anything still in flight from the old generation is
dropped on arrival.
"""

from __future__ import annotations

import concurrent.futures
import queue as queue_mod
import random
import re
import statistics
import threading
import time
import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .errors import EmptyText, EngineFailure, OrderViolation

_DATA_DIR = Path(__file__).parent / "data"

MIN_WORDS = 7
MAX_WORDS = 15
DEFAULT_RATE = 22050
MS_PER_WORD = 250
CROSSFADE_MS = 20
PAUSE_PUNCTUATION_MS = 120
PAUSE_SOFT_MS = 60


class BoundaryKind(Enum):
    PUNCTUATION = "punctuation"
    DISCOURSE = "discourse"
    SYNTACTIC = "syntactic"
    FORCED = "forced"


@dataclass
class Segment:
    """One synthesis unit. ``separator`` holds the exact source text that
    followed it (punctuation and/or space) so joining segments reproduces the
    normalized input byte-for-byte."""

    index: int
    text: str
    word_count: int
    boundary: Optional[BoundaryKind]
    separator: str = ""

    def punctuation_terminal(self) -> bool:
        return bool(re.search(r"[.,;:!?]", self.separator))


def _load_lexicon(name: str) -> frozenset[str]:
    path = _DATA_DIR / name
    return frozenset(
        w.strip().lower() for w in path.read_text(encoding="utf-8").splitlines() if w.strip()
    )


def discourse_markers() -> frozenset[str]:
    return _load_lexicon("discourse_markers.txt")


def subordinators() -> frozenset[str]:
    return _load_lexicon("subordinators.txt")


_PUNCT_SPLIT_RE = re.compile(r"([.,;:!?]+)(?:\s+|$)")


@dataclass
class _Piece:
    words: list[str]
    separator: str  # exact text that follows: punctuation and/or a space
    boundary: Optional[BoundaryKind]

    def punct_terminal(self) -> bool:
        return bool(re.search(r"[.,;:!?]", self.separator))


def _split_long_piece(piece: _Piece, markers: frozenset[str], subs: frozenset[str]) -> Optional[list[_Piece]]:
    """Split a >MAX_WORDS piece once; returns None if it is already short."""
    words = piece.words
    if len(words) <= MAX_WORDS:
        return None

    def positions(lexicon: frozenset[str]) -> list[int]:
        return [i for i in range(1, len(words)) if words[i].lower().strip("'\"") in lexicon]

    for lexicon, kind in ((markers, BoundaryKind.DISCOURSE), (subs, BoundaryKind.SYNTACTIC)):
        candidates = [p for p in positions(lexicon) if MIN_WORDS <= p <= MAX_WORDS]
        if candidates:
            p = candidates[0]
            left = _Piece(words[:p], " ", kind)
            right = _Piece(words[p:], piece.separator, piece.boundary)
            return [left, right]
    # no usable linguistic boundary: hard cut at the word budget
    left = _Piece(words[:MAX_WORDS], " ", BoundaryKind.FORCED)
    right = _Piece(words[MAX_WORDS:], piece.separator, piece.boundary)
    return [left, right]


def normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def segment(text: str) -> list[Segment]:
    """Deterministic rule-based segmentation into 7-15 word chunks.

    Punctuation splits first; over-long pieces are then cut before discourse
    markers or subordinators, or at the word budget as a last resort; under-
    length pieces merge forward unless a punctuation mark ends them.
    """
    norm = normalize(text)
    if not norm:
        raise EmptyText("nothing to segment after whitespace normalization")

    markers = discourse_markers()
    subs = subordinators()

    # pass 1: punctuation boundaries, keeping the exact separators
    pieces: list[_Piece] = []
    pos = 0
    for match in _PUNCT_SPLIT_RE.finditer(norm):
        body = norm[pos:match.start()]
        if body.strip():
            sep = norm[match.start():match.end()]
            pieces.append(_Piece(body.strip().split(" "), sep, BoundaryKind.PUNCTUATION))
        pos = match.end()
    if pos < len(norm):
        tail = norm[pos:].strip()
        if tail:
            pieces.append(_Piece(tail.split(" "), "", None))
    if not pieces:
        raise EmptyText("input contains punctuation only")

    # passes 2-4: cut long pieces, merge short ones, until stable
    budget = 10 * (len(norm.split()) + len(pieces)) + 10
    changed = True
    while changed and budget > 0:
        budget -= 1
        changed = False
        for i, piece in enumerate(pieces):
            split = _split_long_piece(piece, markers, subs)
            if split:
                pieces[i:i + 1] = split
                changed = True
                break
            if (
                len(piece.words) < MIN_WORDS
                and not piece.punct_terminal()
                and i + 1 < len(pieces)
            ):
                nxt = pieces[i + 1]
                pieces[i:i + 2] = [_Piece(piece.words + nxt.words, nxt.separator, nxt.boundary)]
                changed = True
                break

    segments = []
    for i, piece in enumerate(pieces):
        segments.append(
            Segment(
                index=i + 1,
                text=" ".join(piece.words),
                word_count=len(piece.words),
                boundary=piece.boundary if i + 1 < len(pieces) else None,
                separator=piece.separator,
            )
        )
    return segments


def join_segments(segments: list[Segment]) -> str:
    """Inverse of ``segment`` up to whitespace normalization."""
    return "".join(seg.text + seg.separator for seg in segments).strip()


# --- synthesis engines -------------------------------------------------------


class MockTtsEngine:
    """Deterministic PCM generator with configurable simulated latency.

    Output is a quiet sine tone whose frequency is derived from the text, so
    identical text gives identical samples. ``real_time=True`` sleeps for the
    drawn latency, which the interrupt tests rely on.
    """

    def __init__(
        self,
        base_ms: float = 5.0,
        jitter_ms: float = 0.0,
        seed: int = 0,
        rate: int = DEFAULT_RATE,
        ms_per_word: float = MS_PER_WORD,
        real_time: bool = True,
        fail_on: Optional[Callable[[str], bool]] = None,
    ):
        self.base_ms = base_ms
        self.jitter_ms = jitter_ms
        self.rate = rate
        self.ms_per_word = ms_per_word
        self.real_time = real_time
        self.fail_on = fail_on
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def draw_latency_ms(self) -> float:
        with self._lock:
            return self.base_ms + self._rng.uniform(0.0, self.jitter_ms)

    def synthesize(self, text: str) -> tuple[np.ndarray, float]:
        """Returns (int16 mono samples, synth latency ms)."""
        latency = self.draw_latency_ms()
        if self.real_time and latency > 0:
            time.sleep(latency / 1000.0)
        if self.fail_on and self.fail_on(text):
            raise EngineFailure(f"injected failure for segment {text[:30]!r}")
        words = max(1, len(text.split()))
        n = int(self.rate * words * self.ms_per_word / 1000.0)
        freq = 110.0 + (hash(text) % 880)
        t = np.arange(n, dtype=np.float64) / self.rate
        samples = (np.sin(2 * np.pi * freq * t) * 0.2 * 32767).astype(np.int16)
        return samples, latency


def silence(words: int, rate: int = DEFAULT_RATE, ms_per_word: float = MS_PER_WORD) -> np.ndarray:
    n = int(rate * max(1, words) * ms_per_word / 1000.0)
    return np.zeros(n, dtype=np.int16)


# --- queue and streaming -----------------------------------------------------


@dataclass
class AudioChunk:
    index: int
    generation: int
    samples: np.ndarray
    duration_ms: float
    synth_latency_ms: float
    boundary: Optional[BoundaryKind]
    final: bool = False
    degraded: bool = False


class QueueState(Enum):
    IDLE = "idle"
    SYNTHESIZING = "synthesizing"
    PLAYING = "playing"
    CLEARED = "cleared"


_INTERRUPTED = object()
_DONE = object()


class TtsQueue:
    """Interruptible reorder buffer between synthesis workers and playback.

    Chunks arrive in completion order tagged with (generation, index) and are
    released strictly in index order. ``clear`` bumps the generation; stale
    chunks are dropped and the downstream stream ends with an interrupted
    marker immediately.
    """

    def __init__(self, session_id: str = "default"):
        self.session_id = session_id
        self.state = QueueState.IDLE
        self.generation = 0
        self._lock = threading.RLock()
        self._buffer: dict[int, AudioChunk] = {}
        self._next_index = 1
        self._expected = 0
        self._released = 0
        self._out: queue_mod.Queue = queue_mod.Queue()
        self._futures: list[concurrent.futures.Future] = []
        self.interrupted = False

    def begin(self, expected: int) -> int:
        with self._lock:
            if self.state not in (QueueState.IDLE, QueueState.CLEARED):
                raise OrderViolation("queue is busy; clear it before a new utterance")
            self.generation += 1
            self.state = QueueState.SYNTHESIZING
            self._buffer.clear()
            self._next_index = 1
            self._expected = expected
            self._released = 0
            self._out = queue_mod.Queue()
            self._futures = []
            self.interrupted = False
            return self.generation

    def attach(self, futures: list[concurrent.futures.Future]) -> None:
        with self._lock:
            self._futures = list(futures)

    def offer(self, chunk: AudioChunk) -> None:
        with self._lock:
            if chunk.generation != self.generation or self.state in (
                QueueState.CLEARED,
                QueueState.IDLE,
            ):
                return  # stale generation: drop silently
            self._buffer[chunk.index] = chunk
            while self._next_index in self._buffer:
                out = self._buffer.pop(self._next_index)
                self._next_index += 1
                self._released += 1
                out.final = self._released == self._expected
                self.state = QueueState.PLAYING
                self._out.put(out)
            if self._released == self._expected:
                self._out.put(_DONE)
                self.state = QueueState.IDLE

    def clear(self) -> None:
        """Idempotent; stale in-flight work is fenced out by the generation bump."""
        with self._lock:
            was_active = self.state in (QueueState.SYNTHESIZING, QueueState.PLAYING)
            for future in self._futures:
                future.cancel()
            self._futures = []
            self._buffer.clear()
            if was_active:
                self.generation += 1
                self.state = QueueState.CLEARED
                self.interrupted = True
                self._out.put(_INTERRUPTED)
            # marker delivered; settle back so a new utterance can begin
            self.state = QueueState.IDLE

    def stream(self, timeout_s: float = 30.0) -> Iterator[AudioChunk]:
        """Yield chunks in index order; stops on completion or interruption."""
        while True:
            item = self._out.get(timeout=timeout_s)
            if item is _DONE:
                return
            if item is _INTERRUPTED:
                return
            yield item


def synthesize_parallel(
    engine: MockTtsEngine,
    segments: list[Segment],
    queue: TtsQueue,
    workers: int = 4,
) -> Iterator[AudioChunk]:
    """Dispatch all segments concurrently; chunks are released in order.

    A failing segment is retried once, then replaced by silence of estimated
    duration and flagged degraded.
    """
    generation = queue.begin(len(segments))
    executor = concurrent.futures.ThreadPoolExecutor(max_workers=workers)

    def job(seg: Segment) -> None:
        try:
            try:
                samples, latency = engine.synthesize(seg.text)
                degraded = False
            except EngineFailure:
                try:
                    samples, latency = engine.synthesize(seg.text)
                    degraded = False
                except EngineFailure:
                    samples = silence(seg.word_count, engine.rate, engine.ms_per_word)
                    latency = 0.0
                    degraded = True
            chunk = AudioChunk(
                index=seg.index,
                generation=generation,
                samples=samples,
                duration_ms=len(samples) / engine.rate * 1000.0,
                synth_latency_ms=latency,
                boundary=seg.boundary,
                degraded=degraded,
            )
            queue.offer(chunk)
        except Exception:
            # never let a worker die silently; emit silence instead
            queue.offer(
                AudioChunk(
                    index=seg.index,
                    generation=generation,
                    samples=silence(seg.word_count, engine.rate, engine.ms_per_word),
                    duration_ms=seg.word_count * engine.ms_per_word,
                    synth_latency_ms=0.0,
                    boundary=seg.boundary,
                    degraded=True,
                )
            )

    futures = [executor.submit(job, seg) for seg in segments]
    queue.attach(futures)
    executor.shutdown(wait=False)
    return queue.stream()


@dataclass
class ConcatResult:
    samples: np.ndarray
    duration_ms: float
    rate: int
    interrupted: bool = False


def stream_concat(
    chunks: Iterable[AudioChunk],
    rate: int = DEFAULT_RATE,
    crossfade_ms: float = CROSSFADE_MS,
    pause_punctuation_ms: float = PAUSE_PUNCTUATION_MS,
    pause_soft_ms: float = PAUSE_SOFT_MS,
) -> ConcatResult:
    """Join ordered chunks with a linear crossfade and boundary-typed pauses."""
    acc: Optional[np.ndarray] = None
    prev_boundary: Optional[BoundaryKind] = None
    expected = 1
    fade_n = int(rate * crossfade_ms / 1000.0)
    for chunk in chunks:
        if chunk.index != expected:
            raise OrderViolation(f"chunk {chunk.index} arrived, expected {expected}")
        expected += 1
        samples = chunk.samples.astype(np.int16)
        if acc is None:
            acc = samples
        else:
            pause_ms = (
                pause_punctuation_ms
                if prev_boundary is BoundaryKind.PUNCTUATION
                else pause_soft_ms
            )
            pause = np.zeros(int(rate * pause_ms / 1000.0), dtype=np.int16)
            incoming = np.concatenate([pause, samples])
            n = min(fade_n, len(acc), len(incoming))
            if n > 0:
                ramp = np.linspace(1.0, 0.0, n)
                mixed = (acc[-n:] * ramp + incoming[:n] * ramp[::-1]).astype(np.int16)
                acc = np.concatenate([acc[:-n], mixed, incoming[n:]])
            else:
                acc = np.concatenate([acc, incoming])
        prev_boundary = chunk.boundary
    if acc is None:
        acc = np.zeros(0, dtype=np.int16)
    return ConcatResult(acc, len(acc) / rate * 1000.0, rate)


def write_wav(path: Path, result: ConcatResult) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(result.rate)
        f.writeframes(result.samples.tobytes())


# --- benchmark ---------------------------------------------------------------


@dataclass
class LatencyModel:
    """Per-segment synthesis latency: base plus uniform jitter."""

    base_ms: float = 50.0
    jitter_ms: float = 20.0


@dataclass
class BenchReport:
    mode: str
    n: int
    mean_ms: float
    variance_ms2: float
    ttfa_mean_ms: float
    ttfa_variance_ms2: float
    per_utterance_ms: list[float] = field(default_factory=list)

    def as_row(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "mean_ms": round(self.mean_ms, 3),
            "variance_ms2": round(self.variance_ms2, 3),
            "ttfa_mean_ms": round(self.ttfa_mean_ms, 3),
            "ttfa_variance_ms2": round(self.ttfa_variance_ms2, 3),
        }


def _schedule(latencies: list[float], mode: str, workers: int) -> tuple[float, float]:
    """Simulated completion time and time-to-first-audio for one utterance."""
    if mode == "sequential":
        return sum(latencies), latencies[0]
    if mode != "parallel-batch":
        raise ValueError(f"unknown mode {mode!r}")
    free = [0.0] * max(1, workers)
    ends = []
    for lat in latencies:  # greedy list scheduling in segment order
        slot = min(range(len(free)), key=lambda i: free[i])
        start = free[slot]
        free[slot] = start + lat
        ends.append(start + lat)
    return max(ends), ends[0]


def benchmark(
    corpus: list[str],
    mode: str,
    model: LatencyModel = LatencyModel(),
    seed: int = 42,
    workers: int = 4,
) -> BenchReport:
    """Simulated-clock latency report over a text corpus.

    The RNG is reseeded per call, so running both modes with the same seed
    pairs identical latency draws against each other.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    rng = random.Random(seed)
    totals, ttfas = [], []
    for text in corpus:
        segments = segment(text)
        latencies = [model.base_ms + rng.uniform(0.0, model.jitter_ms) for _ in segments]
        total, ttfa = _schedule(latencies, mode, workers)
        totals.append(total)
        ttfas.append(ttfa)
    return BenchReport(
        mode=mode,
        n=len(corpus),
        mean_ms=statistics.fmean(totals),
        variance_ms2=statistics.pvariance(totals) if len(totals) > 1 else 0.0,
        ttfa_mean_ms=statistics.fmean(ttfas),
        ttfa_variance_ms2=statistics.pvariance(ttfas) if len(ttfas) > 1 else 0.0,
        per_utterance_ms=totals,
    )
