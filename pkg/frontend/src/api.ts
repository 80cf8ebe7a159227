/** Envelope-aware HTTP client for the evaluation service.
 *
 * The service wraps every body as {ok, data | error}; this client unwraps
 * `data` on success and throws an ApiError carrying the error envelope
 * verbatim otherwise, so views can render exactly what the service said.
 */

import type {
  CriterionDecisionResult,
  Envelope,
  ExpertImportResult,
  FailureReport,
  IccReport,
  ReviewStatus,
  Rubric,
  RunDetail,
  RunSummary,
  ScoreProfile,
  Subtask,
  SubtaskDecisionResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }

  /** The error envelope as the service sent it. */
  envelope(): { code: string; message: string } {
    return { code: this.code, message: this.message };
  }
}

export type DecisionAction = "approve" | "edit" | "reject";

export interface DecisionBody {
  action: DecisionAction;
  edits?: Record<string, unknown>;
  editor?: string;
  idempotency_key?: string;
}

export class ApiClient {
  /** Bearer token, held in memory only; empty string sends no header. */
  private token = "";

  constructor(private readonly baseUrl: string = "") {}

  setToken(token: string): void {
    this.token = token;
  }

  hasToken(): boolean {
    return this.token !== "";
  }

  // -- runs ---------------------------------------------------------------

  listRuns(): Promise<RunSummary[]> {
    return this.request("GET", "/runs");
  }

  createRun(body: {
    problem_id: string;
    run_id?: string;
    language?: string;
    review_mode?: boolean;
  }): Promise<RunSummary> {
    return this.request("POST", "/runs", body);
  }

  getRun(runId: string): Promise<RunDetail> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}`);
  }

  // -- subtask review -----------------------------------------------------

  listSubtasks(runId: string): Promise<Subtask[]> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/subtasks`);
  }

  decideSubtask(
    runId: string,
    subtaskId: string,
    body: DecisionBody,
  ): Promise<SubtaskDecisionResult> {
    return this.request(
      "POST",
      `/runs/${encodeURIComponent(runId)}/subtasks/${encodeURIComponent(subtaskId)}/decision`,
      body,
    );
  }

  regenerateSubtasks(runId: string, guidance: string): Promise<{ state: string }> {
    return this.request(
      "POST",
      `/runs/${encodeURIComponent(runId)}/subtasks/regenerate`,
      { guidance },
    );
  }

  // -- rubric review ------------------------------------------------------

  getRubric(runId: string, subtaskId: string): Promise<Rubric> {
    return this.request(
      "GET",
      `/runs/${encodeURIComponent(runId)}/rubrics/${encodeURIComponent(subtaskId)}`,
    );
  }

  decideCriterion(
    runId: string,
    criterionId: string,
    body: DecisionBody,
  ): Promise<CriterionDecisionResult> {
    return this.request(
      "POST",
      `/runs/${encodeURIComponent(runId)}/criteria/${encodeURIComponent(criterionId)}/decision`,
      body,
    );
  }

  // -- judging and results --------------------------------------------------

  startJudging(
    runId: string,
    raters: string[],
    baseline = false,
  ): Promise<{ state: string; raters: string[] }> {
    return this.request("POST", `/runs/${encodeURIComponent(runId)}/judge`, {
      raters,
      baseline,
    });
  }

  listProfiles(runId: string): Promise<ScoreProfile[]> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/profiles`);
  }

  getIcc(
    runId: string,
    params: {
      scheme?: "ours" | "baseline";
      level?: "report" | "criterion";
      stage?: string;
      expert_collapse?: "rater_id" | "mean";
    } = {},
  ): Promise<IccReport> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined) query.set(key, value);
    }
    const suffix = query.size > 0 ? `?${query.toString()}` : "";
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/icc${suffix}`);
  }

  getFailures(
    runId: string,
    params: { threshold?: number; rater?: string } = {},
  ): Promise<FailureReport> {
    const query = new URLSearchParams();
    if (params.threshold !== undefined) query.set("threshold", String(params.threshold));
    if (params.rater !== undefined) query.set("rater", params.rater);
    const suffix = query.size > 0 ? `?${query.toString()}` : "";
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/failures${suffix}`);
  }

  uploadExpertScores(runId: string, file: File | Blob): Promise<ExpertImportResult> {
    const form = new FormData();
    form.append("file", file, "scores.csv");
    return this.request(
      "POST",
      `/runs/${encodeURIComponent(runId)}/expert-scores`,
      form,
    );
  }

  // -- debug (fixture-backed services only) --------------------------------

  getMockCalls(): Promise<{ tag: string; system: string; user: string }[]> {
    return this.request("GET", "/debug/mock-calls");
  }

  // -- plumbing -------------------------------------------------------------

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: object | FormData,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let payload: string | FormData | undefined;
    if (body instanceof FormData) {
      payload = body; // fetch sets the multipart boundary itself
    } else if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      payload = JSON.stringify(body);
    }

    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, { method, headers, body: payload });
    } catch (err) {
      throw new ApiError("unreachable", `service unreachable: ${String(err)}`, 0);
    }

    let envelope: Envelope<T>;
    try {
      envelope = (await response.json()) as Envelope<T>;
    } catch {
      throw new ApiError(
        "bad_envelope",
        `response was not JSON (HTTP ${response.status})`,
        response.status,
      );
    }

    if (!envelope.ok || !response.ok) {
      const error = envelope.error ?? {
        code: "bad_envelope",
        message: `HTTP ${response.status} without an error envelope`,
      };
      throw new ApiError(error.code, error.message, response.status);
    }
    return envelope.data as T;
  }
}

/** Stable idempotency key for a review decision, so a retried POST
 * (double click, flaky network) applies exactly once server-side. */
export function decisionKey(
  kind: "subtask" | "criterion",
  entityId: string,
  action: DecisionAction,
  revision: number,
): string {
  return `ui:${kind}:${entityId}:${action}:${revision}`;
}

export function isConflict(err: unknown): err is ApiError {
  return err instanceof ApiError && err.status === 409;
}

export type { ReviewStatus };
