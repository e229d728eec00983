// Browser entry point: wires the reducer, the PCM player, and the gateway
// client to the page. All displayed state flows through state.ts; this file
// only moves strings into the DOM.

import { PcmPlayer, makeWebAudioContext } from "./audio";
import { GatewayClient, TurnStream } from "./client";
import { MemoryRecord } from "./protocol";
import {
  renderInterruptButton,
  renderMemory,
  renderTranscript,
} from "./render";
import {
  ConsoleState,
  applyEnvelope,
  applyTrace,
  initialState,
  markPlaybackFinished,
} from "./state";

const POLL_MS = 250;

export function startConsole(root: HTMLElement, baseUrl: string): void {
  const state: ConsoleState = initialState();
  const client = new GatewayClient(baseUrl);
  const player = new PcmPlayer(makeWebAudioContext());
  let stream: TurnStream | null = null;

  root.innerHTML = `
    <div id="banner" hidden></div>
    <section id="transcript"></section>
    <form id="composer">
      <input id="query" placeholder="Say something" autocomplete="off" />
      <button type="submit">Send</button>
      <span id="interrupt-slot"></span>
    </form>
    <section id="memory-panel"></section>
  `;
  const transcript = root.querySelector("#transcript") as HTMLElement;
  const interruptSlot = root.querySelector("#interrupt-slot") as HTMLElement;
  const memoryPanel = root.querySelector("#memory-panel") as HTMLElement;
  const banner = root.querySelector("#banner") as HTMLElement;
  const form = root.querySelector("#composer") as HTMLFormElement;
  const input = root.querySelector("#query") as HTMLInputElement;

  function redraw(): void {
    transcript.innerHTML = renderTranscript(state);
    interruptSlot.innerHTML = renderInterruptButton(state);
    const button = interruptSlot.querySelector("#interrupt");
    button?.addEventListener("click", async () => {
      if (!state.sessionId) return;
      player.stop(); // halt locally first, then tell the server
      await client.interrupt(state.sessionId);
    });
  }

  async function refreshMemory(): Promise<void> {
    if (!state.sessionId) return;
    const dump = await client.memory(state.sessionId);
    memoryPanel.innerHTML = renderMemory(
      dump.records as unknown as MemoryRecord[]
    );
  }

  async function connect(): Promise<void> {
    const sessionId = state.sessionId ?? (await client.createSession());
    state.sessionId = sessionId;
    stream = client.openStream(sessionId, {
      onEnvelope: (envelope) => {
        applyEnvelope(state, envelope);
        redraw();
        if (envelope.kind === "turn_done") void refreshMemory();
      },
      onAudioFrame: (meta, frame) => {
        player.enqueue(frame, meta.rate);
      },
      onClose: () => {
        state.connected = false;
        banner.hidden = false;
        banner.textContent = "Connection lost. Reconnecting...";
        setTimeout(() => void reconnect(), 1000);
      },
    });
    state.connected = true;
    banner.hidden = true;
  }

  async function reconnect(): Promise<void> {
    if (!state.sessionId) return;
    // replay what we missed from the trace endpoint, then resubscribe
    for (const card of state.cards) {
      if (card.status === "processing") {
        try {
          const trace = await client.trace(state.sessionId, card.turnId);
          applyTrace(state, trace as Parameters<typeof applyTrace>[1]);
        } catch {
          // turn may not have been recorded; leave the card as is
        }
      }
    }
    redraw();
    await connect();
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value.trim();
    if (!text || !stream) return;
    stream.sendText(text);
    input.value = "";
  });

  // the gateway has no playback-finished event; poll the audio clock
  setInterval(() => {
    if (state.player === "playing" && !player.playing) {
      markPlaybackFinished(state);
      redraw();
    }
  }, POLL_MS);

  void connect().then(redraw);
}
