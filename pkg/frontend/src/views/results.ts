/** Results: per-report stage-score heat tables, an agreement (ICC) panel,
 * failure-prevalence tables, and expert CSV import.
 *
 * Every number shown here comes straight from the service; this screen
 * computes nothing itself (cell colors are pure presentation). */

import { h, swap } from "../dom.js";
import { STAGES, type FailureReport, type IccReport, type ScoreProfile } from "../types.js";
import { errorBanner, formatScore, heatColor, section } from "./common.js";
import type { ViewContext } from "./runs.js";

export async function renderResults(ctx: ViewContext, runId: string): Promise<HTMLElement> {
  const root = h("div", { class: "view" });
  try {
    const profiles = await ctx.client.listProfiles(runId);
    if (profiles.length === 0) {
      root.append(h("p", { class: "muted" }, "No score profiles yet."));
    }
    for (const profile of profiles) {
      root.append(profilePanel(profile));
    }
  } catch (err) {
    root.append(errorBanner(err));
  }
  root.append(iccPanel(ctx, runId), failurePanel(ctx, runId), expertUpload(ctx, runId));
  return root;
}

function profilePanel(profile: ScoreProfile): HTMLElement {
  const subtaskIds = Object.keys(profile.stage_scores).sort();
  const head = h(
    "tr",
    {},
    h("th", {}, "subtask"),
    ...STAGES.map((stage) => h("th", { class: "rotated" }, stage)),
    h("th", {}, "subtask score"),
  );
  const rows = subtaskIds.map((subtaskId, index) => {
    const perStage = profile.stage_scores[subtaskId] ?? {};
    const cells = STAGES.map((stage) => {
      const value = perStage[stage];
      if (value === undefined) {
        return h("td", { class: "na" }, "–");
      }
      const cell = h("td", {}, formatScore(value));
      cell.setAttribute("style", `background:${heatColor(value)}`);
      return cell;
    });
    const subtaskScore = profile.subtask_scores[subtaskId];
    return h(
      "tr",
      {},
      h("td", {}, `${index + 1}`),
      ...cells,
      h("td", {}, subtaskScore === undefined ? "–" : formatScore(subtaskScore)),
    );
  });

  return section(
    `Report ${profile.report_id} · rater ${profile.rater_id} · score ${formatScore(profile.report_score)}`,
    h(
      "div",
      { class: "scroll-x" },
      h("table", { class: "data heat" }, h("thead", {}, head), h("tbody", {}, ...rows)),
    ),
  );
}

function iccPanel(ctx: ViewContext, runId: string): HTMLElement {
  const scheme = selectBox(["ours", "baseline"]);
  const level = selectBox(["report", "criterion"]);
  const stage = selectBox(["", ...STAGES]);
  const collapse = selectBox(["rater_id", "mean"]);
  const output = h("div", {});

  async function refresh(): Promise<void> {
    swap(output, h("p", { class: "muted" }, "computing…"));
    try {
      const report: IccReport = await ctx.client.getIcc(runId, {
        scheme: scheme.value as "ours" | "baseline",
        level: level.value as "report" | "criterion",
        stage: stage.value || undefined,
        expert_collapse: collapse.value as "rater_id" | "mean",
      });
      swap(
        output,
        h(
          "table",
          { class: "data" },
          h(
            "tbody",
            {},
            kv("ICC(2,1)", report.icc.toFixed(4)),
            kv("items (n)", String(report.n)),
            kv("raters (k)", String(report.k)),
            kv("MS rows", report.ms_r.toFixed(4)),
            kv("MS cols", report.ms_c.toFixed(4)),
            kv("MS error", report.ms_e.toFixed(4)),
          ),
        ),
      );
    } catch (err) {
      swap(output, errorBanner(err));
    }
  }

  const form = h(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        void refresh();
      },
    },
    label("scheme", scheme),
    label("level", level),
    label("stage", stage),
    label("experts", collapse),
    h("button", { type: "submit" }, "Compute agreement"),
  );
  return section("Inter-rater agreement", form, output);
}

function failurePanel(ctx: ViewContext, runId: string): HTMLElement {
  const thresholdInput = h("input", { type: "text", class: "points" }) as HTMLInputElement;
  thresholdInput.value = "8.0";
  const raterInput = h("input", {
    type: "text",
    placeholder: "rater (default: first)",
  }) as HTMLInputElement;
  const output = h("div", {});

  async function refresh(): Promise<void> {
    swap(output, h("p", { class: "muted" }, "mining…"));
    const threshold = Number(thresholdInput.value);
    try {
      const report: FailureReport = await ctx.client.getFailures(runId, {
        threshold: Number.isFinite(threshold) ? threshold : undefined,
        rater: raterInput.value.trim() || undefined,
      });
      const parts: (Node | string)[] = [
        h(
          "p",
          {},
          `rater ${report.rater_id} · threshold ${report.threshold} · ` +
            `${report.low_cells} low cells, ${report.labeled_cells} labeled`,
        ),
      ];
      for (const [stage, rows] of Object.entries(report.tables)) {
        if (!rows || rows.length === 0) continue;
        parts.push(
          h("h3", {}, stage),
          h(
            "table",
            { class: "data" },
            h(
              "thead",
              {},
              h(
                "tr",
                {},
                h("th", {}, "model"),
                h("th", {}, "failure cause"),
                h("th", {}, "fraction"),
                h("th", {}, "count"),
                h("th", {}, "low cells"),
              ),
            ),
            h(
              "tbody",
              {},
              ...rows.map((row) =>
                h(
                  "tr",
                  {},
                  h("td", {}, row.model),
                  h("td", {}, row.label),
                  h("td", {}, row.fraction),
                  h("td", {}, String(row.count)),
                  h("td", {}, String(row.total)),
                ),
              ),
            ),
          ),
        );
      }
      swap(output, ...parts);
    } catch (err) {
      swap(output, errorBanner(err));
    }
  }

  const form = h(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        void refresh();
      },
    },
    label("score threshold", thresholdInput),
    label("rater", raterInput),
    h("button", { type: "submit" }, "Mine failure causes"),
  );
  return section("Failure prevalence", form, output);
}

function expertUpload(ctx: ViewContext, runId: string): HTMLElement {
  const fileInput = h("input", { type: "file", accept: ".csv,text/csv" }) as HTMLInputElement;
  const feedback = h("div", {});

  const form = h(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        void submit();
      },
    },
    fileInput,
    h("button", { type: "submit" }, "Import expert scores"),
    feedback,
  );

  async function submit(): Promise<void> {
    swap(feedback);
    const file = fileInput.files?.[0];
    if (!file) {
      swap(feedback, errorBanner(new Error("choose a CSV file first")));
      return;
    }
    try {
      const result = await ctx.client.uploadExpertScores(runId, file);
      const lines: (Node | string)[] = [
        h("p", {}, `${result.accepted} rows accepted, ${result.rejected.length} rejected.`),
      ];
      for (const rejection of result.rejected) {
        lines.push(h("p", { class: "muted" }, `line ${rejection.line}: ${rejection.reason}`));
      }
      swap(feedback, ...lines);
    } catch (err) {
      swap(feedback, errorBanner(err));
    }
  }

  return section("Expert scores (CSV)", form);
}

function selectBox(options: string[]): HTMLSelectElement {
  const select = h("select", {}) as HTMLSelectElement;
  for (const option of options) {
    select.append(h("option", { value: option }, option === "" ? "(all)" : option));
  }
  return select;
}

function label(text: string, control: Node): HTMLElement {
  return h("label", { class: "field" }, `${text} `, control);
}

function kv(key: string, value: string): HTMLElement {
  return h("tr", {}, h("th", {}, key), h("td", {}, value));
}
