/** Rubric review: per-stage criterion cards with live validation badges.
 *
 * Badges mirror the service rules (3-5 criteria per stage, points summing
 * to 100) and recompute on every keystroke in a points field, so a broken
 * edit is visible before it is submitted. The service remains the
 * validator of record. */

import { decisionKey, isConflict } from "../api.js";
import { h, swap } from "../dom.js";
import type { Criterion, Rubric, StageName, Subtask } from "../types.js";
import { stageBadge, parsePoints } from "../validation.js";
import { errorBanner, section, statusPill } from "./common.js";
import type { ViewContext } from "./runs.js";

export async function renderRubricReview(
  ctx: ViewContext,
  runId: string,
): Promise<HTMLElement> {
  const root = h("div", { class: "view" });
  try {
    const subtasks = await ctx.client.listSubtasks(runId);
    const approved = subtasks.filter((s) => s.status === "approved");
    if (approved.length === 0) {
      root.append(h("p", { class: "muted" }, "No approved subtasks, so no rubrics."));
      return root;
    }
    for (const subtask of approved) {
      const rubric = await ctx.client.getRubric(runId, subtask.id);
      root.append(rubricPanel(ctx, runId, subtask, rubric));
    }
    root.append(judgeLauncher(ctx, runId));
  } catch (err) {
    root.append(errorBanner(err));
  }
  return root;
}

function rubricPanel(
  ctx: ViewContext,
  runId: string,
  subtask: Subtask,
  rubric: Rubric,
): HTMLElement {
  const understanding = h(
    "dl",
    { class: "understanding" },
    ...Object.entries(rubric.understanding).flatMap(([key, value]) => [
      h("dt", {}, key.replace(/_/g, " ")),
      h("dd", {}, value),
    ]),
  );

  const stages: HTMLElement[] = [];
  for (const [stage, criteria] of Object.entries(rubric.stage_criteria)) {
    if (criteria && criteria.length > 0) {
      stages.push(stageGroup(ctx, runId, stage as StageName, criteria));
    }
  }
  for (const [stage, reason] of Object.entries(rubric.not_applicable)) {
    stages.push(
      h(
        "div",
        { class: "stage-group stage-na" },
        h("h3", {}, `${stage} `, h("span", { class: "pill pill-na" }, "not applicable")),
        h("p", { class: "muted" }, reason ?? ""),
      ),
    );
  }

  return section(
    `Subtask ${subtask.ordinal}: ${subtask.description}`,
    understanding,
    ...stages,
  );
}

function stageGroup(
  ctx: ViewContext,
  runId: string,
  stage: StageName,
  initial: Criterion[],
): HTMLElement {
  // Working copies: `points`/`name` may hold unsaved edits; the badge sees
  // exactly what the reviewer sees.
  const models = initial.map((c) => ({ ...c }));
  const badgeHost = h("span", { class: "badge" });

  function refreshBadge(): void {
    const badge = stageBadge(models);
    badgeHost.className = `badge ${badge.ok ? "badge-ok" : "badge-bad"}`;
    swap(
      badgeHost,
      `${badge.count} criteria · ${badge.sum}/100`,
      badge.ok ? " ✓" : " ✗",
    );
  }

  const cards = models.map((model) => criterionCard(ctx, runId, model, refreshBadge));
  refreshBadge();
  return h(
    "div",
    { class: "stage-group" },
    h("h3", {}, `${stage} `, badgeHost),
    ...cards,
  );
}

function criterionCard(
  ctx: ViewContext,
  runId: string,
  model: Criterion,
  refreshBadge: () => void,
): HTMLElement {
  const card = h("article", { class: "card criterion" });
  // Last state the service confirmed; optimistic edits roll back to this.
  let committed: Criterion = { ...model };

  function render(busy = false, error?: unknown): void {
    const nameInput = h("input", { type: "text" }) as HTMLInputElement;
    nameInput.value = model.name;
    const pointsInput = h("input", {
      type: "text",
      class: "points",
      inputmode: "numeric",
    }) as HTMLInputElement;
    pointsInput.value = String(model.points);
    pointsInput.addEventListener("input", () => {
      const parsed = parsePoints(pointsInput.value);
      // The badge previews the pending value; an unparseable field counts
      // as 0 so the stage visibly breaks rather than silently passing.
      model.points = parsed ?? 0;
      refreshBadge();
    });
    if (busy) {
      nameInput.setAttribute("disabled", "");
      pointsInput.setAttribute("disabled", "");
    }

    const actions = h(
      "div",
      { class: "actions" },
      actionButton("Approve", busy, () => decide("approve")),
      actionButton("Save edit", busy, () => {
        const name = nameInput.value.trim();
        const points = parsePoints(pointsInput.value);
        if (!name || points === null) {
          render(false, new Error("name must be non-empty and points a whole number"));
          return;
        }
        if (name === committed.name && points === committed.points) return;
        decide("edit", { name, points });
      }),
      actionButton("Reject", busy, () => decide("reject")),
    );

    swap(
      card,
      h(
        "header",
        {},
        nameInput,
        pointsInput,
        h("span", {}, " pts "),
        statusPill(model.status),
      ),
      h("p", {}, model.description),
      model.scoring_hint ? h("p", { class: "muted" }, `Scoring: ${model.scoring_hint}`) : null,
      actions,
      error !== undefined ? errorBanner(error) : null,
    );
  }

  function decide(
    action: "approve" | "edit" | "reject",
    edits?: { name: string; points: number },
  ): void {
    Object.assign(model, edits, {
      status: action === "edit" ? "edited" : action === "approve" ? "approved" : "rejected",
    });
    refreshBadge();
    render(true);
    void ctx.client
      .decideCriterion(runId, model.id, {
        action,
        edits,
        editor: "review-ui",
        idempotency_key: decisionKey("criterion", model.id, action, committed.revision),
      })
      .then((result) => {
        Object.assign(model, result.criterion);
        committed = { ...model };
        refreshBadge();
        render();
        if (result.rubrics_restarted) {
          ctx.navigate(`#/runs/${encodeURIComponent(runId)}`);
        }
      })
      .catch((err) => {
        if (isConflict(err)) {
          Object.assign(model, committed); // roll the optimistic render back
          refreshBadge();
        }
        render(false, err);
      });
  }

  render();
  return card;
}

function judgeLauncher(ctx: ViewContext, runId: string): HTMLElement {
  const ratersInput = h("input", {
    type: "text",
    placeholder: "rater ids, comma separated",
  }) as HTMLInputElement;
  const baselineBox = h("input", { type: "checkbox" }) as HTMLInputElement;
  const feedback = h("div", {});

  const form = h(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        void submit();
      },
    },
    ratersInput,
    h("label", {}, baselineBox, " also score the four-dimension baseline"),
    h("button", { type: "submit" }, "Start judging"),
    feedback,
  );

  async function submit(): Promise<void> {
    swap(feedback);
    const raters = ratersInput.value
      .split(",")
      .map((r) => r.trim())
      .filter((r) => r !== "");
    try {
      await ctx.client.startJudging(runId, raters, baselineBox.checked);
      ctx.navigate(`#/runs/${encodeURIComponent(runId)}`);
    } catch (err) {
      swap(feedback, errorBanner(err));
    }
  }

  return section("Judge", form);
}

function actionButton(label: string, disabled: boolean, onClick: () => void): HTMLElement {
  const el = h("button", { type: "button", onclick: () => onClick() }, label);
  if (disabled) el.setAttribute("disabled", "");
  return el;
}
