/** Subtask review: the original problem statement side by side with the
 * generated decomposition. Each subtask can be approved, edited inline, or
 * rejected; a guidance box sends the whole decomposition back for
 * regeneration. Edits render optimistically and roll back on conflict. */

import { decisionKey, isConflict } from "../api.js";
import { h, swap } from "../dom.js";
import type { Subtask } from "../types.js";
import { errorBanner, section, statusPill } from "./common.js";
import type { ViewContext } from "./runs.js";

export async function renderSubtaskReview(
  ctx: ViewContext,
  runId: string,
): Promise<HTMLElement> {
  const root = h("div", { class: "view" });
  try {
    const [run, subtasks] = await Promise.all([
      ctx.client.getRun(runId),
      ctx.client.listSubtasks(runId),
    ]);
    const left = section(
      run.problem ? `Problem: ${run.problem.title}` : `Problem ${run.problem_id}`,
      h("pre", { class: "statement" }, run.problem?.statement ?? "(statement unavailable)"),
    );
    const cards = subtasks.map((subtask) => subtaskCard(ctx, runId, subtask));
    const right = section("Generated subtasks", ...cards);
    root.append(
      h("div", { class: "side-by-side" }, left, right),
      regenerateBox(ctx, runId),
    );
  } catch (err) {
    root.append(errorBanner(err));
  }
  return root;
}

function subtaskCard(ctx: ViewContext, runId: string, initial: Subtask): HTMLElement {
  let current = initial;
  const card = h("article", { class: "card" });

  function render(busy = false, error?: unknown): void {
    const textarea = h("textarea", { rows: "4" }) as HTMLTextAreaElement;
    textarea.value = current.description;
    if (busy) textarea.setAttribute("disabled", "");

    const buttons = h(
      "div",
      { class: "actions" },
      button("Approve", busy, () => decide("approve")),
      button("Save edit", busy, () => {
        const description = textarea.value.trim();
        if (!description) {
          render(false, new Error("description cannot be empty"));
          return;
        }
        if (description === current.description) return;
        decide("edit", { description });
      }),
      button("Reject", busy, () => decide("reject")),
    );

    swap(
      card,
      h(
        "header",
        {},
        h("strong", {}, `Subtask ${current.ordinal}`),
        " ",
        statusPill(current.status),
      ),
      textarea,
      buttons,
      error !== undefined ? errorBanner(error) : null,
    );
  }

  function decide(
    action: "approve" | "edit" | "reject",
    edits?: { description: string },
  ): void {
    const before = current;
    // Optimistic: show the outcome immediately, roll back if the service
    // refuses (typically 409 when the run has moved on under us).
    current = {
      ...current,
      status: action === "edit" ? "edited" : action === "approve" ? "approved" : "rejected",
      description: edits?.description ?? current.description,
    };
    render(true);
    void ctx.client
      .decideSubtask(runId, before.id, {
        action,
        edits,
        editor: "review-ui",
        idempotency_key: decisionKey("subtask", before.id, action, before.revision),
      })
      .then((result) => {
        current = result.subtask;
        render();
        if (result.review_complete) {
          ctx.navigate(`#/runs/${encodeURIComponent(runId)}`);
        }
      })
      .catch((err) => {
        if (isConflict(err)) {
          current = before; // roll the optimistic render back
        }
        render(false, err);
      });
  }

  render();
  return card;
}

function regenerateBox(ctx: ViewContext, runId: string): HTMLElement {
  const guidance = h("textarea", {
    rows: "3",
    placeholder: "What should change in the decomposition?",
  }) as HTMLTextAreaElement;
  const feedback = h("div", {});
  const form = h(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        void submit();
      },
    },
    guidance,
    h("button", { type: "submit" }, "Regenerate with guidance"),
    feedback,
  );

  async function submit(): Promise<void> {
    swap(feedback);
    try {
      await ctx.client.regenerateSubtasks(runId, guidance.value.trim());
      ctx.navigate(`#/runs/${encodeURIComponent(runId)}`);
    } catch (err) {
      swap(feedback, errorBanner(err));
    }
  }

  return section("Regenerate", form);
}

function button(label: string, disabled: boolean, onClick: () => void): HTMLElement {
  const el = h("button", { type: "button", onclick: () => onClick() }, label);
  if (disabled) el.setAttribute("disabled", "");
  return el;
}
