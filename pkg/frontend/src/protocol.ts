// Wire types for the gateway event stream. Everything displayed by the
// console originates from one of these shapes; there is no client-side
// orchestration logic.

import { z } from "zod";

export const EventKindSchema = z.enum([
  "transcript",
  "controls",
  "expert_started",
  "expert_done",
  "fusion_done",
  "segment",
  "audio_chunk_meta",
  "interrupted",
  "turn_done",
  "turn_failed",
]);
export type EventKind = z.infer<typeof EventKindSchema>;

export const EnvelopeSchema = z.object({
  session_id: z.string(),
  turn_id: z.number().int().nullable(),
  kind: EventKindSchema,
  payload: z.record(z.unknown()),
  seq: z.number().int().positive(),
});
export type EventEnvelope = z.infer<typeof EnvelopeSchema>;

export const TERMINAL_KINDS: ReadonlySet<EventKind> = new Set([
  "turn_done",
  "interrupted",
  "turn_failed",
]);

export const AudioChunkMetaSchema = z.object({
  turn_id: z.number().int(),
  index: z.number().int(),
  generation: z.number().int(),
  duration_ms: z.number(),
  rate: z.number().int().positive(),
  final: z.boolean(),
  degraded: z.boolean(),
});
export type AudioChunkMeta = z.infer<typeof AudioChunkMetaSchema>;

export interface MemoryRecord {
  id: string;
  modality: string;
  turn_id: number;
  content: { type: string; data: string };
  references: string[];
  priority: number;
}

export function parseEnvelope(data: unknown): EventEnvelope {
  const raw = typeof data === "string" ? JSON.parse(data) : data;
  return EnvelopeSchema.parse(raw);
}

export function parseAudioChunkMeta(payload: unknown): AudioChunkMeta {
  return AudioChunkMetaSchema.parse(payload);
}
