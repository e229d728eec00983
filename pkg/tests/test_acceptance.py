"""Acceptance suite: one test per headline criterion, one verdict line each.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible with ``pytest -s``
or on failure) in addition to its assertions.
"""

import itertools
import json
import random
import threading
import time
from contextlib import contextmanager

from modalmux.memory import MemoryStore, validate_record
from modalmux.protocol import InstructionRegistry, select_modalities, split_tokens
from modalmux.runtime import GARDEN_SCENARIO
from modalmux.scenario import Scenario, run_scenario
from modalmux.tts import (
    MAX_WORDS,
    MIN_WORDS,
    LatencyModel,
    MockTtsEngine,
    TtsQueue,
    benchmark,
    join_segments,
    normalize,
    segment,
    synthesize_parallel,
)


@contextmanager
def verdict(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def test_garden_workflow_fidelity():
    with verdict("garden workflow fidelity (interrupt + cache reuse) in < 5 s"):
        started = time.monotonic()
        report, artifacts = run_scenario(Scenario.load(GARDEN_SCENARIO), seed=0)
        elapsed = time.monotonic() - started
        assert report.passed, "\n".join(report.summary_lines())

        turn1, turn2, turn3 = artifacts.turns
        vision_ok = [r for t in artifacts.turns for r in t.expert_trace
                     if r.modality == "vision" and r.outcome == "ok"]
        assert len(vision_ok) == 1 and vision_ok[0] in turn1.expert_trace
        assert turn2.path == "stop" and turn2.expert_trace == []
        assert any("interrupt_flag" in it.context
                   for it in artifacts.session.store.items)
        cached = [r for r in turn3.expert_trace if r.modality == "vision"]
        assert [r.outcome for r in cached] == ["skipped_cached"]
        assert "3" in turn3.final_text
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_protocol_property_suite():
    with verdict("protocol properties on 1,000 randomized texts in < 10 s"):
        started = time.monotonic()
        rng = random.Random(2024)
        alphabet = ["[S.stop]", "[S.listen]", "[S.speak]", "[S.need_vision]",
                    "[S.need_reasoning]", "[S.unknown]", "[S", "]", ".", " "]
        words = ["roses", "count", "the", "please", "image", "why"]
        registry = InstructionRegistry()
        for _ in range(1000):
            raw = "".join(
                rng.choice(alphabet) if rng.random() < 0.5
                else rng.choice(words) + " "
                for _ in range(rng.randint(0, 14))
            )
            out = split_tokens(raw)
            # lossless split
            assert out.reassemble() == raw
            # parse idempotence: extracted content holds no further tokens
            assert split_tokens(out.content).controls == []
            # selection monotonicity: adding a token never shrinks the set
            base = select_modalities(out.controls, registry)
            extra = split_tokens("[S.need_vision]").controls[0]
            assert base <= select_modalities(out.controls + [extra], registry)
        elapsed = time.monotonic() - started
        assert elapsed < 10.0, f"took {elapsed:.2f}s"


def test_tts_latency_reproduction():
    name = ("parallel-batch >= 10% faster, variance < 0.5x sequential "
            "(200 utterances, workers=4) in < 30 s")
    with verdict(name):
        started = time.monotonic()
        rng = random.Random(99)
        filler = "the quiet garden holds many bright flowers near the old stone path"
        corpus = []
        for _ in range(200):
            k = rng.randint(3, 6)  # 3-6 segments per utterance
            clauses = [" ".join(rng.sample(filler.split(), rng.randint(8, 12)))
                       for _ in range(k)]
            text = ", ".join(clauses) + "."
            assert len(segment(text)) == k
            corpus.append(text)
        model = LatencyModel(base_ms=50.0, jitter_ms=20.0)
        sequential = benchmark(corpus, "sequential", model, seed=42, workers=4)
        parallel = benchmark(corpus, "parallel-batch", model, seed=42, workers=4)
        reduction = (sequential.mean_ms - parallel.mean_ms) / sequential.mean_ms
        ratio = parallel.variance_ms2 / sequential.variance_ms2
        elapsed = time.monotonic() - started
        assert reduction >= 0.10, f"mean reduction only {reduction:.3f}"
        assert ratio < 0.5, f"variance ratio {ratio:.3f}"
        assert elapsed < 30.0, f"took {elapsed:.2f}s"


def test_segmentation_conformance():
    with verdict("segmentation conformance over example + 500-sentence corpus"):
        example = "The cat sat on the mat, while the dog slept peacefully."
        segs = segment(example)
        assert [s.text for s in segs] == [
            "The cat sat on the mat",
            "while the dog slept peacefully",
        ]

        rng = random.Random(500)
        vocab = ("garden rose tulip bloom light water stone path bird song wind "
                 "morning however because while although quiet river hill").split()
        for _ in range(500):
            clauses = [" ".join(rng.choice(vocab)
                                for _ in range(rng.randint(1, 24)))
                       for _ in range(rng.randint(1, 4))]
            text = rng.choice([", ", "; ", ". "]).join(clauses) + "."
            segs = segment(text)
            assert join_segments(segs) == normalize(text)
            for i, seg in enumerate(segs):
                assert seg.word_count <= MAX_WORDS
                if seg.word_count < MIN_WORDS:
                    assert seg.punctuation_terminal() or i == len(segs) - 1


def test_interrupt_fencing():
    with verdict("100 randomized interrupts: no stale chunks, stop <= 200 ms"):
        text = ", ".join(["alpha beta gamma delta"] * 8) + "."
        segments = segment(text)
        assert len(segments) == 8
        rng = random.Random(7)
        for trial in range(100):
            engine = MockTtsEngine(base_ms=8.0, jitter_ms=8.0, seed=trial,
                                   real_time=True)
            queue = TtsQueue()
            stream = synthesize_parallel(engine, segments, queue, workers=4)
            # timestamp the moment each chunk is emitted downstream
            emitted = []
            original_put = queue._out.put

            def put(item, _orig=original_put, _log=emitted):
                _log.append((item, time.monotonic()))
                _orig(item)

            queue._out.put = put
            cleared_at = {}

            def clear_later(delay):
                time.sleep(delay)
                queue.clear()
                cleared_at["t"] = time.monotonic()

            delay = rng.uniform(0.002, 0.035)
            timer = threading.Thread(target=clear_later, args=(delay,))
            timer.start()
            for _chunk in stream:
                pass
            ended = time.monotonic()
            timer.join()
            fence = queue.generation
            for item, at in emitted:
                if hasattr(item, "generation") and at > cleared_at["t"]:
                    assert item.generation >= fence, f"trial {trial}: stale chunk"
            assert ended - cleared_at["t"] <= 0.200, (
                f"trial {trial}: stream lived {(ended - cleared_at['t']) * 1000:.0f} ms"
            )


def test_memory_schema_and_compression():
    with verdict("1,000-record schema round-trip + 50-turn compression closure"):
        counter = itertools.count()
        store = MemoryStore("acceptance",
                            id_factory=lambda: f"id-{next(counter):05d}")
        rng = random.Random(13)
        modalities = ["text", "vision", "audio", "reasoning"]
        for i in range(1000):
            item = store.new_item(
                modality=rng.choice(modalities),
                data=f"record {i} " + " ".join(
                    rng.choice(["garden", "rose", "light", "stone"])
                    for _ in range(rng.randint(1, 8))
                ),
                turn_id=i // 20 + 1,
                priority=round(rng.random(), 3),
            )
            record = item.to_record()
            validate_record(record)
            wire = json.dumps(record, sort_keys=True)
            from modalmux.memory import MemoryItem

            back = MemoryItem.from_record(json.loads(wire))
            assert json.dumps(back.to_record(), sort_keys=True) == wire

        compressed = MemoryStore("closure", budget=4000,
                                 id_factory=lambda: f"cl-{next(counter):05d}")
        all_summaries = {}  # summaries get folded again later; keep them all
        for turn in range(1, 51):
            compressed.append(compressed.new_item(
                "text", f"turn {turn}: " + "observed detail " * 12, turn))
            if compressed.rendered_size() > compressed.budget:
                compressed.compress()
                for it in compressed.items:
                    if it.source == "compressor":
                        all_summaries[it.id] = it
        assert compressed.rendered_size() <= compressed.budget
        last_two = [it.data for it in compressed.items
                    if it.turn_id >= 49 and it.source != "compressor"]
        assert last_two == [f"turn {t}: " + "observed detail " * 12
                            for t in (49, 50)]
        # every retired id was folded into exactly one summary
        for retired_id in compressed.retired:
            count = sum(retired_id in s.references
                        for s in all_summaries.values())
            assert count == 1, f"{retired_id} referenced by {count} summaries"
        assert compressed.consistency_report()["dangling_references"] == []


def test_end_to_end_determinism():
    with verdict("two seeded runs produce identical turn results"):
        scenario = Scenario.load(GARDEN_SCENARIO)
        views = []
        for _ in range(2):
            report, artifacts = run_scenario(scenario, seed=0)
            assert report.passed
            views.append([t.stable_view() for t in artifacts.turns])
        assert views[0] == views[1]
