// Console state reducer. Envelopes may arrive from a reconnecting socket,
// so anything out of seq order is buffered and applied once the gap closes;
// the rendered transcript therefore always mirrors seq order.

import { EventEnvelope, TERMINAL_KINDS } from "./protocol";

export type PlayerState = "idle" | "playing" | "interrupted";
export type CardStatus = "processing" | "done" | "interrupted" | "failed";

export interface ExpertEntry {
  modality: string;
  outcome?: string;
  cachedItemId?: string | null;
}

export interface TurnCard {
  turnId: number;
  userText: string;
  controls: string[];
  experts: ExpertEntry[];
  finalText: string;
  segments: string[];
  status: CardStatus;
  error?: string;
}

export interface ConsoleState {
  sessionId: string | null;
  cards: TurnCard[];
  player: PlayerState;
  lastSeq: number;
  pending: Map<number, EventEnvelope>;
  connected: boolean;
}

export function initialState(): ConsoleState {
  return {
    sessionId: null,
    cards: [],
    player: "idle",
    lastSeq: 0,
    pending: new Map(),
    connected: false,
  };
}

export function interruptEnabled(state: ConsoleState): boolean {
  return (
    state.player === "playing" ||
    state.cards.some((card) => card.status === "processing")
  );
}

function cardFor(state: ConsoleState, turnId: number): TurnCard {
  let card = state.cards.find((c) => c.turnId === turnId);
  if (!card) {
    card = {
      turnId,
      userText: "",
      controls: [],
      experts: [],
      finalText: "",
      segments: [],
      status: "processing",
    };
    state.cards.push(card);
    state.cards.sort((a, b) => a.turnId - b.turnId);
  }
  return card;
}

function applyOne(state: ConsoleState, envelope: EventEnvelope): void {
  state.sessionId = envelope.session_id;
  const payload = envelope.payload as Record<string, unknown>;
  if (envelope.turn_id === null) {
    if (envelope.kind === "turn_failed") {
      // pre-turn rejection (e.g. oversized payload); no card to attach to
      state.player = "idle";
    }
    return;
  }
  const card = cardFor(state, envelope.turn_id);
  switch (envelope.kind) {
    case "transcript":
      card.userText = String(payload.text ?? "");
      break;
    case "controls":
      card.controls = (payload.controls as string[]) ?? [];
      break;
    case "expert_started":
      card.experts.push({ modality: String(payload.modality) });
      break;
    case "expert_done": {
      const entry = card.experts.find(
        (e) => e.modality === payload.modality && e.outcome === undefined
      );
      const done: ExpertEntry = {
        modality: String(payload.modality),
        outcome: String(payload.outcome),
        cachedItemId: (payload.cached_item_id as string | null) ?? null,
      };
      if (entry) Object.assign(entry, done);
      else card.experts.push(done);
      break;
    }
    case "fusion_done":
      card.finalText = String(payload.final_text ?? "");
      break;
    case "segment":
      card.segments.push(String(payload.text ?? ""));
      break;
    case "audio_chunk_meta":
      state.player = "playing";
      break;
    case "interrupted":
      card.status = "interrupted";
      state.player = "interrupted";
      break;
    case "turn_failed":
      card.status = "failed";
      card.error = String(payload.error ?? "unknown failure");
      state.player = "idle";
      break;
    case "turn_done":
      card.status = "done";
      if (state.player !== "playing") state.player = "idle";
      break;
  }
}

/** Apply an envelope, buffering ahead-of-order arrivals until the gap fills.
 *  Returns the envelopes actually applied, in seq order. */
export function applyEnvelope(
  state: ConsoleState,
  envelope: EventEnvelope
): EventEnvelope[] {
  if (envelope.seq <= state.lastSeq) return []; // duplicate from a replay
  state.pending.set(envelope.seq, envelope);
  const applied: EventEnvelope[] = [];
  while (state.pending.has(state.lastSeq + 1)) {
    const next = state.pending.get(state.lastSeq + 1)!;
    state.pending.delete(next.seq);
    applyOne(state, next);
    state.lastSeq = next.seq;
    applied.push(next);
  }
  return applied;
}

/** Rebuild a card from a trace endpoint response after a reconnect. */
export function applyTrace(
  state: ConsoleState,
  trace: {
    turn_id: number;
    transcript: string;
    controls: string[];
    experts: { modality: string; outcome: string; cached_item_id: string | null }[];
    final_text: string;
    segments: string[];
    path: string;
    interrupted: boolean;
    error: string | null;
  }
): void {
  const card = cardFor(state, trace.turn_id);
  card.userText = trace.transcript;
  card.controls = trace.controls;
  card.experts = trace.experts.map((e) => ({
    modality: e.modality,
    outcome: e.outcome,
    cachedItemId: e.cached_item_id,
  }));
  card.finalText = trace.final_text;
  card.segments = trace.segments;
  if (trace.error) {
    card.status = "failed";
    card.error = trace.error;
  } else if (trace.interrupted) {
    card.status = "interrupted";
  } else {
    card.status = "done";
  }
}

export function markPlaybackFinished(state: ConsoleState): void {
  if (state.player === "playing") state.player = "idle";
}

export function isTerminal(envelope: EventEnvelope): boolean {
  return TERMINAL_KINDS.has(envelope.kind);
}
