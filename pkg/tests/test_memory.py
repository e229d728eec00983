import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalmux.errors import BudgetInfeasible, SchemaViolation, TurnOrderViolation
from modalmux.memory import (
    DEFAULT_WEIGHTS,
    MemoryItem,
    MemoryStore,
    jaccard,
    record_violations,
    terms,
    validate_record,
)


def make_store(**kwargs):
    counter = itertools.count()
    kwargs.setdefault("id_factory", lambda: f"id-{next(counter):04d}")
    return MemoryStore("test-session", **kwargs)


def add(store, data, turn_id, modality="text", **kwargs):
    return store.append(store.new_item(modality, data, turn_id, **kwargs))


class TestSchema:
    def test_round_trip(self):
        store = make_store()
        item = add(store, "the garden has 3 red roses", 1, priority=0.7)
        back = MemoryItem.from_record(json.loads(json.dumps(item.to_record())))
        assert back == item

    def test_missing_field(self):
        record = make_store().new_item("text", "x", 1).to_record()
        del record["priority"]
        with pytest.raises(SchemaViolation):
            validate_record(record)

    def test_extra_field(self):
        record = make_store().new_item("text", "x", 1).to_record()
        record["surprise"] = True
        assert record_violations(record)

    def test_bad_modality(self):
        record = make_store().new_item("text", "x", 1).to_record()
        record["modality"] = "Not Valid"
        assert any("modality" in p for p in record_violations(record))

    def test_priority_range(self):
        record = make_store().new_item("text", "x", 1).to_record()
        record["priority"] = 1.5
        with pytest.raises(SchemaViolation):
            validate_record(record)

    def test_violations_enumerate_all(self):
        record = make_store().new_item("text", "x", 1).to_record()
        record["priority"] = -1
        record["turn_id"] = 0
        assert len(record_violations(record)) == 2


class TestAppend:
    def test_duplicate_id(self):
        store = make_store(id_factory=lambda: "same")
        add(store, "a", 1)
        with pytest.raises(SchemaViolation):
            add(store, "b", 1)

    def test_turn_order(self):
        store = make_store()
        add(store, "a", 3)
        with pytest.raises(TurnOrderViolation):
            add(store, "b", 2)

    def test_same_turn_allowed(self):
        store = make_store()
        add(store, "a", 3)
        add(store, "b", 3)
        assert len(store.items) == 2

    def test_jsonl_persistence(self, tmp_path):
        path = tmp_path / "mem.jsonl"
        store = make_store(path=path)
        add(store, "first", 1)
        add(store, "second", 2)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 2
        reopened = MemoryStore("test-session", path=path)
        assert [it.data for it in reopened.items] == ["first", "second"]


class TestRetrieve:
    def test_lexical_overlap_wins(self):
        store = make_store()
        add(store, "the weather was cloudy", 1)
        add(store, "roses and tulips in bloom", 1)
        got = store.retrieve("text", "how many roses", k=1)
        assert got.items[0].data == "roses and tulips in bloom"

    def test_recency_breaks_even_scores(self):
        store = make_store()
        add(store, "apples", 1)
        add(store, "oranges", 5)
        got = store.retrieve("text", "unrelated query words", k=2)
        assert got.items[0].data == "oranges"

    def test_modality_filter(self):
        store = make_store()
        add(store, "spoken words", 1, modality="audio")
        add(store, "typed words", 1)
        got = store.retrieve("audio", "words", k=5)
        assert [it.modality for it in got.items] == ["audio"]

    def test_hit_counter(self):
        store = make_store()
        item = add(store, "roses", 1)
        store.retrieve("text", "roses", k=1)
        store.retrieve("text", "roses", k=1)
        assert store.hits[item.id] == 2

    def test_brute_force_oracle(self):
        # independent reimplementation of the scoring rule
        store = make_store()
        texts = [
            "red roses near the gate",
            "a gray cat slept on the mat",
            "tulips bloom in spring sunlight",
            "the gate was painted red",
            "counting roses takes patience",
        ]
        for i, text in enumerate(texts):
            add(store, text, i + 1, priority=0.2 + 0.1 * i)
        query = "red roses by the gate"
        w_r, w_p, w_l = DEFAULT_WEIGHTS
        max_turn = max(it.turn_id for it in store.items)

        def oracle(it):
            overlap = set(t.lower() for t in it.context) | terms(it.data)
            return (
                w_r * it.turn_id / max_turn
                + w_p * it.priority
                + w_l * jaccard(terms(query), overlap)
            )

        expected = sorted(
            store.items, key=lambda it: (-oracle(it), -it.turn_id, it.id)
        )[:3]
        got = store.retrieve("text", query, k=3)
        assert [it.id for it in got.items] == [it.id for it in expected]

    def test_render_budget_drops_lowest(self):
        store = make_store()
        add(store, "low scoring filler text about nothing", 1, priority=0.0)
        add(store, "roses roses roses", 2, priority=1.0)
        got = store.retrieve("text", "roses", k=2)
        full = got.rendered()
        assert "filler" in full and "roses" in full
        tight = got.rendered(budget=len("[text @ turn 2] roses roses roses"))
        assert "roses" in tight and "filler" not in tight


class TestCompression:
    def test_noop_under_budget(self):
        store = make_store(budget=8000)
        add(store, "short", 1)
        report = store.compress()
        assert report["compressed"] is False

    def test_recent_turns_verbatim(self):
        store = make_store(budget=900)
        for turn in range(1, 8):
            add(store, f"turn {turn} " + "filler words " * 15, turn)
        recent = [it.data for it in store.items if it.turn_id >= 6]
        store.compress()
        still = [it.data for it in store.items if it.turn_id >= 6]
        assert recent == still

    def test_summary_references_and_closure(self):
        store = make_store(budget=900)
        old_ids = []
        for turn in range(1, 8):
            old_ids.append(add(store, f"turn {turn} " + "filler words " * 15, turn).id)
        report = store.compress()
        assert report["compressed"] is True
        assert store.rendered_size() <= store.budget
        summaries = [it for it in store.items if it.source == "compressor"]
        assert summaries
        for s in summaries:
            assert s.references
            assert set(s.references) <= set(old_ids)
        assert store.consistency_report()["dangling_references"] == []

    def test_budget_infeasible(self):
        store = make_store(budget=50)
        add(store, "this line alone is already far beyond a fifty char budget", 1)
        add(store, "and so is this second overlong line in the same recent window", 2)
        with pytest.raises(BudgetInfeasible):
            store.compress()

    def test_convergence_over_turns(self):
        store = make_store(budget=900)
        for turn in range(1, 30):
            add(store, f"observation {turn}: " + "context detail " * 10, turn)
            if store.rendered_size() > store.budget:
                store.compress()
            assert store.rendered_size() <= store.budget


class TestAtRest:
    def test_large_blob_compressed(self):
        store = make_store()
        blob = "A" * 9000
        item = add(store, blob, 1, modality="image", content_type="image/png",
                   context=["blob"])
        assert item.compression_algorithm == "zlib"
        assert item.compression_ratio > 1.0
        assert MemoryStore.decompress_payload(item) == blob.encode()

    def test_text_stays_verbatim(self):
        store = make_store()
        item = add(store, "B" * 9000, 1)
        assert item.compression_algorithm is None


turn_lists = st.lists(st.integers(min_value=1, max_value=20), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(turn_lists)
def test_append_then_compress_always_within_budget(turns):
    store = make_store(budget=1200)
    for turn in sorted(turns):
        add(store, f"note for turn {turn} " + "padding " * 8, turn)
        if store.rendered_size() > store.budget:
            try:
                store.compress()
            except BudgetInfeasible:
                return
        assert store.rendered_size() <= store.budget
    for item in store.items:
        validate_record(item.to_record())
