/** App shell: hash router, token field, and screen mounting. */

import { ApiClient } from "./api.js";
import { h, swap } from "./dom.js";
import { errorBanner } from "./views/common.js";
import { renderRunDetail } from "./views/detail.js";
import { renderResults } from "./views/results.js";
import { renderRubricReview } from "./views/rubrics.js";
import { renderRunList, type ViewContext } from "./views/runs.js";
import { renderSubtaskReview } from "./views/subtasks.js";

export function startApp(root: HTMLElement, baseUrl = ""): void {
  const client = new ApiClient(baseUrl);
  const outlet = h("main", {});
  let dispose: (() => void) | null = null;

  const ctx: ViewContext = {
    client,
    navigate: (hash: string) => {
      if (location.hash === hash) {
        void route();
      } else {
        location.hash = hash;
      }
    },
  };

  root.append(header(client, () => void route()), outlet);
  window.addEventListener("hashchange", () => void route());
  void route();

  async function route(): Promise<void> {
    dispose?.();
    dispose = null;
    const segments = location.hash.replace(/^#\/?/, "").split("/").filter(Boolean);
    try {
      if (segments.length === 0 || segments[0] !== "runs") {
        swap(outlet, await renderRunList(ctx));
        return;
      }
      if (segments.length === 1) {
        swap(outlet, await renderRunList(ctx));
        return;
      }
      const runId = decodeURIComponent(segments[1]);
      if (segments.length === 2) {
        const view = renderRunDetail(ctx, runId);
        dispose = view.dispose;
        swap(outlet, view.element);
        return;
      }
      switch (segments[2]) {
        case "subtasks":
          swap(outlet, await renderSubtaskReview(ctx, runId));
          return;
        case "rubrics":
          swap(outlet, await renderRubricReview(ctx, runId));
          return;
        case "results":
          swap(outlet, await renderResults(ctx, runId));
          return;
        default:
          swap(outlet, errorBanner(new Error(`unknown screen: ${segments[2]}`)));
      }
    } catch (err) {
      swap(outlet, errorBanner(err));
    }
  }
}

function header(client: ApiClient, onTokenChange: () => void): HTMLElement {
  const tokenInput = h("input", {
    type: "password",
    placeholder: "bearer token",
    autocomplete: "off",
  }) as HTMLInputElement;

  const form = h(
    "form",
    {
      class: "token-form",
      onsubmit: (event: Event) => {
        event.preventDefault();
        client.setToken(tokenInput.value.trim());
        onTokenChange();
      },
    },
    tokenInput,
    h("button", { type: "submit" }, "Use token"),
  );

  return h(
    "header",
    { class: "app-header" },
    h("a", { href: "#/runs", class: "brand" }, "Report review"),
    form,
  );
}
