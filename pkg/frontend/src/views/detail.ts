/** Run detail: pipeline state, background-job indicator, and the doors
 * into the review and results screens that the current state allows. */

import { h, swap } from "../dom.js";
import { poll, type PollHandle } from "../poll.js";
import type { RunDetail } from "../types.js";
import { errorBanner, section, statePill } from "./common.js";
import type { ViewContext } from "./runs.js";

const TERMINAL_FOR_POLL = new Set([
  "awaiting_subtask_review",
  "awaiting_rubric_review",
  "complete",
  "failed",
]);

export function renderRunDetail(
  ctx: ViewContext,
  runId: string,
): { element: HTMLElement; dispose: () => void } {
  const root = h("div", { class: "view" });
  const host = h("div", {});
  root.append(host);

  const handle: PollHandle<RunDetail> = poll(
    () => ctx.client.getRun(runId),
    (run) => TERMINAL_FOR_POLL.has(run.state) && !run.job_active,
    { onUpdate: (run) => swap(host, ...runPanels(run)) },
  );
  handle.done.catch((err) => {
    if ((err as Error).name !== "PollCancelled") swap(host, errorBanner(err));
  });

  return { element: root, dispose: () => handle.cancel() };
}

function runPanels(run: RunDetail): HTMLElement[] {
  const id = encodeURIComponent(run.run_id);
  const header = section(
    `Run ${run.run_id}`,
    h(
      "p",
      {},
      "problem ",
      h("strong", {}, run.problem_id),
      " · ",
      statePill(run.state, run.job_active),
    ),
    run.error ? errorBanner(new Error(run.error)) : null,
  );

  const doors: HTMLElement[] = [];
  if (run.state === "awaiting_subtask_review") {
    doors.push(door(`#/runs/${id}/subtasks`, "Review subtasks"));
  }
  if (run.state === "awaiting_rubric_review") {
    doors.push(door(`#/runs/${id}/rubrics`, "Review rubrics"));
  }
  if (run.state === "awaiting_rubric_review" || run.state === "complete") {
    doors.push(door(`#/runs/${id}/results`, "Results"));
  }
  const navigation = section(
    "Screens",
    doors.length > 0
      ? h("p", {}, ...doors)
      : h("p", { class: "muted" }, "Pipeline is working; this page refreshes itself."),
  );

  const panels = [header, navigation];
  if (run.problem) {
    panels.push(
      section(
        `Problem: ${run.problem.title}`,
        h("pre", { class: "statement" }, run.problem.statement),
      ),
    );
  }
  return panels;
}

function door(href: string, label: string): HTMLElement {
  return h("a", { class: "door", href }, label);
}
