/** Run list: every evaluation run with its pipeline state, plus a form to
 * start a new one. */

import type { ApiClient } from "../api.js";
import { h, swap } from "../dom.js";
import { errorBanner, section, statePill } from "./common.js";

export interface ViewContext {
  client: ApiClient;
  navigate: (hash: string) => void;
}

export async function renderRunList(ctx: ViewContext): Promise<HTMLElement> {
  const root = h("div", { class: "view" });
  const listHost = h("div", {});
  root.append(section("Runs", listHost), createRunForm(ctx));

  try {
    const runs = await ctx.client.listRuns();
    if (runs.length === 0) {
      swap(listHost, h("p", { class: "muted" }, "No runs yet."));
      return root;
    }
    const rows = runs.map((run) =>
      h(
        "tr",
        {},
        h(
          "td",
          {},
          h(
            "a",
            {
              href: `#/runs/${encodeURIComponent(run.run_id)}`,
            },
            run.run_id,
          ),
        ),
        h("td", {}, run.problem_id),
        h("td", {}, statePill(run.state)),
        h("td", {}, run.review_mode ? "review" : "auto"),
        h("td", {}, run.updated_at),
      ),
    );
    swap(
      listHost,
      h(
        "table",
        { class: "data" },
        h(
          "thead",
          {},
          h(
            "tr",
            {},
            h("th", {}, "run"),
            h("th", {}, "problem"),
            h("th", {}, "state"),
            h("th", {}, "mode"),
            h("th", {}, "updated"),
          ),
        ),
        h("tbody", {}, ...rows),
      ),
    );
  } catch (err) {
    swap(listHost, errorBanner(err));
  }
  return root;
}

function createRunForm(ctx: ViewContext): HTMLElement {
  const problemInput = h("input", {
    type: "text",
    placeholder: "problem id",
    required: true,
  }) as HTMLInputElement;
  const runInput = h("input", {
    type: "text",
    placeholder: "run id (optional)",
  }) as HTMLInputElement;
  const reviewBox = h("input", { type: "checkbox", checked: true }) as HTMLInputElement;
  const feedback = h("div", {});

  const form = h(
    "form",
    {
      class: "create-run",
      onsubmit: (event: Event) => {
        event.preventDefault();
        void submit();
      },
    },
    problemInput,
    runInput,
    h("label", {}, reviewBox, " expert review"),
    h("button", { type: "submit" }, "Start run"),
    feedback,
  );

  async function submit(): Promise<void> {
    swap(feedback);
    const problemId = problemInput.value.trim();
    if (!problemId) {
      swap(feedback, errorBanner(new Error("problem id is required")));
      return;
    }
    try {
      const run = await ctx.client.createRun({
        problem_id: problemId,
        run_id: runInput.value.trim() || undefined,
        review_mode: reviewBox.checked,
      });
      ctx.navigate(`#/runs/${encodeURIComponent(run.run_id)}`);
    } catch (err) {
      swap(feedback, errorBanner(err));
    }
  }

  return section("New run", form);
}
