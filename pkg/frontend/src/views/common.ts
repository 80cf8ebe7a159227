/** Bits shared by every screen: error banners, status pills, state badges. */

import { ApiError } from "../api.js";
import { h, type Child } from "../dom.js";
import type { ReviewStatus, RunPipelineState } from "../types.js";

/** Render a failure exactly as the service reported it. The error envelope
 * is shown verbatim (code and message), never rephrased. */
export function errorBanner(err: unknown): HTMLElement {
  if (err instanceof ApiError) {
    const envelope = err.envelope();
    return h(
      "div",
      { class: "error-banner", role: "alert" },
      h("code", {}, envelope.code),
      ": ",
      envelope.message,
    );
  }
  return h("div", { class: "error-banner", role: "alert" }, String(err));
}

export function statusPill(status: ReviewStatus): HTMLElement {
  return h("span", { class: `pill pill-${status}` }, status);
}

export function statePill(state: RunPipelineState, jobActive = false): HTMLElement {
  const label = jobActive ? `${state} (working)` : state;
  return h("span", { class: `pill state-${state}` }, label);
}

export function section(title: string, ...children: Child[]): HTMLElement {
  return h("section", { class: "panel" }, h("h2", {}, title), ...children);
}

/** Background for a 0..10 score cell: red at 0 through green at 10. */
export function heatColor(score: number): string {
  const clamped = Math.max(0, Math.min(10, score));
  const hue = (clamped / 10) * 120;
  return `hsl(${hue.toFixed(0)}, 70%, 82%)`;
}

export function formatScore(value: number): string {
  return Number.isInteger(value) ? String(value) : value.toFixed(1);
}
