// Thin gateway client: session lifecycle over fetch, turns over a
// WebSocket. Binary PCM frames are paired with the audio_chunk_meta
// envelope that immediately precedes them, per the stream contract.

import {
  AudioChunkMeta,
  EventEnvelope,
  parseAudioChunkMeta,
  parseEnvelope,
} from "./protocol";

export interface WebSocketLike {
  binaryType: string;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: ((event: { code: number }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export interface StreamHandlers {
  onEnvelope(envelope: EventEnvelope): void;
  onAudioFrame(meta: AudioChunkMeta, frame: ArrayBuffer): void;
  onClose?(code: number): void;
  onError?(error: unknown): void;
}

export interface GatewayClientOptions {
  fetchImpl?: typeof fetch;
  wsFactory?: (url: string) => WebSocketLike;
  token?: string;
}

export class GatewayClient {
  private readonly fetchImpl: typeof fetch;
  private readonly wsFactory: (url: string) => WebSocketLike;
  private readonly token?: string;

  constructor(readonly baseUrl: string, options: GatewayClientOptions = {}) {
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
    this.wsFactory =
      options.wsFactory ??
      ((url: string) => new WebSocket(url) as unknown as WebSocketLike);
    this.token = options.token;
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: this.headers(),
      ...init,
    });
    if (!response.ok) {
      throw new Error(`${path}: HTTP ${response.status}`);
    }
    return (await response.json()) as T;
  }

  async createSession(overrides?: Record<string, unknown>): Promise<string> {
    const body = await this.json<{ session_id: string }>("/sessions", {
      method: "POST",
      body: JSON.stringify(overrides ?? {}),
    });
    return body.session_id;
  }

  async interrupt(sessionId: string): Promise<{ was_active: boolean }> {
    return this.json(`/sessions/${sessionId}/interrupt`, { method: "POST" });
  }

  async memory(sessionId: string): Promise<{
    records: Record<string, unknown>[];
    consistency: { items: number; dangling_references: string[] };
  }> {
    return this.json(`/sessions/${sessionId}/memory`);
  }

  async trace(sessionId: string, turnId: number): Promise<Record<string, unknown>> {
    return this.json(`/sessions/${sessionId}/trace/${turnId}`);
  }

  openStream(sessionId: string, handlers: StreamHandlers): TurnStream {
    const wsBase = this.baseUrl.replace(/^http/, "ws");
    const query = this.token ? `?token=${encodeURIComponent(this.token)}` : "";
    const socket = this.wsFactory(
      `${wsBase}/sessions/${sessionId}/stream${query}`
    );
    return new TurnStream(socket, handlers);
  }
}

export class TurnStream {
  private pendingMeta: AudioChunkMeta | null = null;

  constructor(
    private readonly socket: WebSocketLike,
    handlers: StreamHandlers
  ) {
    socket.binaryType = "arraybuffer";
    socket.onmessage = (event) => {
      if (typeof event.data === "string") {
        const envelope = parseEnvelope(event.data);
        if (envelope.kind === "audio_chunk_meta") {
          this.pendingMeta = parseAudioChunkMeta(envelope.payload);
        }
        handlers.onEnvelope(envelope);
      } else if (event.data instanceof ArrayBuffer) {
        if (this.pendingMeta === null) {
          // binary frame without an announcing envelope: drop it
          return;
        }
        const meta = this.pendingMeta;
        this.pendingMeta = null;
        handlers.onAudioFrame(meta, event.data);
      }
    };
    socket.onclose = (event) => handlers.onClose?.(event.code);
    socket.onerror = (event) => handlers.onError?.(event);
  }

  sendText(text: string): void {
    this.socket.send(JSON.stringify({ text }));
  }

  sendAudioLabel(label: string): void {
    this.socket.send(JSON.stringify({ audio_label: label }));
  }

  close(): void {
    this.socket.close();
  }
}
