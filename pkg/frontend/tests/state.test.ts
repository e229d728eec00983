import { describe, expect, it } from "vitest";

import { EventEnvelope } from "../src/protocol";
import {
  applyEnvelope,
  applyTrace,
  initialState,
  interruptEnabled,
  markPlaybackFinished,
} from "../src/state";

let seq = 0;
function env(
  kind: EventEnvelope["kind"],
  payload: Record<string, unknown>,
  turnId: number | null = 1
): EventEnvelope {
  seq += 1;
  return { session_id: "s1", turn_id: turnId, kind, payload, seq };
}

function gardenTurn1(): EventEnvelope[] {
  return [
    env("transcript", { text: "What flowers are blooming?" }),
    env("controls", { controls: ["[S.need_vision]"] }),
    env("expert_started", { modality: "vision" }),
    env("expert_done", { modality: "vision", outcome: "ok", cached_item_id: null }),
    env("fusion_done", { final_text: "Roses and tulips are in bloom." }),
    env("segment", { index: 1, text: "Roses and tulips are in bloom" }),
    env("audio_chunk_meta", { index: 1, generation: 1, rate: 22050 }),
    env("turn_done", { path: "full" }),
  ];
}

describe("reducer", () => {
  it("builds a full turn card in order", () => {
    seq = 0;
    const state = initialState();
    for (const e of gardenTurn1()) applyEnvelope(state, e);
    expect(state.cards).toHaveLength(1);
    const card = state.cards[0];
    expect(card.userText).toBe("What flowers are blooming?");
    expect(card.controls).toEqual(["[S.need_vision]"]);
    expect(card.experts).toEqual([
      { modality: "vision", outcome: "ok", cachedItemId: null },
    ]);
    expect(card.finalText).toBe("Roses and tulips are in bloom.");
    expect(card.status).toBe("done");
    expect(state.player).toBe("playing");
    expect(state.lastSeq).toBe(8);
  });

  it("buffers out-of-order envelopes until the gap closes", () => {
    seq = 0;
    const state = initialState();
    const events = gardenTurn1();
    const [first, ...rest] = events;
    for (const e of rest) {
      expect(applyEnvelope(state, e)).toEqual([]);
    }
    expect(state.cards).toHaveLength(0);
    const applied = applyEnvelope(state, first);
    expect(applied.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5, 6, 7, 8]);
    expect(state.cards[0].status).toBe("done");
  });

  it("drops duplicate seqs from a replay", () => {
    seq = 0;
    const state = initialState();
    const events = gardenTurn1();
    for (const e of events) applyEnvelope(state, e);
    expect(applyEnvelope(state, events[2])).toEqual([]);
    expect(state.cards[0].experts).toHaveLength(1);
  });

  it("marks interrupted turns and the player", () => {
    seq = 0;
    const state = initialState();
    applyEnvelope(state, env("transcript", { text: "How many roses..." }, 2));
    applyEnvelope(state, env("controls", { controls: ["[S.stop]", "[S.listen]"] }, 2));
    applyEnvelope(state, env("interrupted", {}, 2));
    expect(state.cards[0].status).toBe("interrupted");
    expect(state.player).toBe("interrupted");
  });

  it("records turn failures with the error text", () => {
    seq = 0;
    const state = initialState();
    applyEnvelope(state, env("transcript", { text: "hi" }));
    applyEnvelope(state, env("turn_failed", { error: "backend down" }));
    expect(state.cards[0].status).toBe("failed");
    expect(state.cards[0].error).toBe("backend down");
  });
});

describe("interrupt enablement", () => {
  it("disabled when idle, enabled while processing or playing", () => {
    seq = 0;
    const state = initialState();
    expect(interruptEnabled(state)).toBe(false);
    applyEnvelope(state, env("transcript", { text: "hi" }));
    expect(interruptEnabled(state)).toBe(true); // processing
    applyEnvelope(state, env("controls", { controls: [] }));
    applyEnvelope(state, env("fusion_done", { final_text: "hello" }));
    applyEnvelope(state, env("segment", { text: "hello" }));
    applyEnvelope(state, env("audio_chunk_meta", { index: 1 }));
    applyEnvelope(state, env("turn_done", { path: "full" }));
    expect(state.player).toBe("playing");
    expect(interruptEnabled(state)).toBe(true); // still speaking
    markPlaybackFinished(state);
    expect(interruptEnabled(state)).toBe(false);
  });
});

describe("trace replay", () => {
  it("rebuilds a card after reconnect", () => {
    const state = initialState();
    state.sessionId = "s1";
    applyTrace(state, {
      turn_id: 3,
      transcript: "how many roses are there?",
      controls: ["[S.need_vision]"],
      experts: [{ modality: "vision", outcome: "skipped_cached", cached_item_id: "id-1" }],
      final_text: "There are 3 red roses in the image.",
      segments: ["There are 3 red roses in the image"],
      path: "full",
      interrupted: false,
      error: null,
    });
    const card = state.cards[0];
    expect(card.turnId).toBe(3);
    expect(card.experts[0].cachedItemId).toBe("id-1");
    expect(card.status).toBe("done");
  });

  it("keeps interrupted status from the trace", () => {
    const state = initialState();
    applyTrace(state, {
      turn_id: 2,
      transcript: "How many roses...",
      controls: ["[S.stop]", "[S.listen]"],
      experts: [],
      final_text: "",
      segments: [],
      path: "stop",
      interrupted: true,
      error: null,
    });
    expect(state.cards[0].status).toBe("interrupted");
  });
});
