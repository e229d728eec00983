// Pure HTML rendering for the transcript and memory panels. Kept free of
// DOM APIs so the markup is testable without a browser.

import { MemoryRecord } from "./protocol";
import { ConsoleState, TurnCard, interruptEnabled } from "./state";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderCard(card: TurnCard): string {
  const badges = card.controls
    .map((token) => `<span class="badge token">${escapeHtml(token)}</span>`)
    .join("");
  const experts = card.experts
    .map((e) => {
      const outcome = e.outcome ?? "running";
      const cached = e.cachedItemId ? " (cached)" : "";
      return `<li class="expert ${escapeHtml(outcome)}">${escapeHtml(
        e.modality
      )}: ${escapeHtml(outcome)}${cached}</li>`;
    })
    .join("");
  const statusBadge =
    card.status === "interrupted"
      ? `<span class="badge interrupted">interrupted</span>`
      : card.status === "failed"
      ? `<span class="badge failed">${escapeHtml(card.error ?? "failed")}</span>`
      : "";
  return [
    `<article class="card ${card.status}" data-turn="${card.turnId}">`,
    `<header>Turn ${card.turnId} ${badges}${statusBadge}</header>`,
    `<p class="user">${escapeHtml(card.userText)}</p>`,
    experts ? `<ul class="experts">${experts}</ul>` : "",
    card.finalText ? `<p class="reply">${escapeHtml(card.finalText)}</p>` : "",
    `</article>`,
  ]
    .filter(Boolean)
    .join("\n");
}

export function renderTranscript(state: ConsoleState): string {
  return state.cards.map(renderCard).join("\n");
}

export function renderMemory(records: MemoryRecord[]): string {
  const rows = records
    .map(
      (r) =>
        `<tr><td>${r.turn_id}</td><td>${escapeHtml(r.modality)}</td>` +
        `<td>${escapeHtml(truncate(r.content.data, 80))}</td>` +
        `<td>${r.priority.toFixed(2)}</td></tr>`
    )
    .join("\n");
  return (
    `<table class="memory"><thead><tr>` +
    `<th>turn</th><th>modality</th><th>payload</th><th>priority</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderInterruptButton(state: ConsoleState): string {
  const disabled = interruptEnabled(state) ? "" : " disabled";
  return `<button id="interrupt"${disabled}>Interrupt</button>`;
}

function truncate(text: string, max: number): string {
  return text.length <= max ? text : text.slice(0, max - 3) + "...";
}
