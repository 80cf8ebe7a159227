/** Wire types mirroring the evaluation service's JSON payloads. */

/** Every response body: `data` on success, `error` on failure. */
export interface Envelope<T> {
  ok: boolean;
  data?: T;
  error?: ApiErrorBody;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export type RunPipelineState =
  | "decomposing"
  | "awaiting_subtask_review"
  | "generating_rubrics"
  | "awaiting_rubric_review"
  | "judging"
  | "complete"
  | "failed";

export type ReviewStatus = "generated" | "edited" | "approved" | "rejected";

/** The seven evaluation stages in pipeline order (wire spelling). */
export const STAGES = [
  "ProblemIdentification",
  "ProblemFormulation",
  "AssumptionDevelopment",
  "ModelConstruction",
  "ModelSolving",
  "CodeImplementation",
  "ResultAnalysis",
] as const;

export type StageName = (typeof STAGES)[number];

export interface RunSummary {
  run_id: string;
  problem_id: string;
  state: RunPipelineState;
  language: string;
  review_mode: boolean;
  created_at: string;
  updated_at: string;
  journal_seq: number;
  error: string | null;
}

export interface RunDetail extends RunSummary {
  job_active: boolean;
  problem?: {
    id: string;
    title: string;
    statement: string;
  };
}

export interface Subtask {
  id: string;
  problem_id: string;
  ordinal: number;
  description: string;
  depends_on: string[];
  status: ReviewStatus;
  revision: number;
}

export interface Criterion {
  id: string;
  subtask_id: string;
  stage: StageName;
  name: string;
  description: string;
  points: number;
  evaluation_focus: string;
  scoring_hint: string;
  status: ReviewStatus;
  revision: number;
}

export interface Rubric {
  subtask_id: string;
  understanding: {
    core_goal: string;
    expected_output: string;
    key_inputs_constraints: string;
    modeling_type: string;
    role_in_pipeline: string;
  };
  stage_criteria: Partial<Record<StageName, Criterion[]>>;
  not_applicable: Partial<Record<StageName, string>>;
}

export interface CriterionScore {
  criterion_id: string;
  report_id: string;
  rater_id: string;
  level: string;
  awarded: number;
  comment: string;
}

export interface ScoreProfile {
  report_id: string;
  rater_id: string;
  criterion_scores: CriterionScore[];
  /** subtask id -> stage name -> 0..10 score; absent stage = not applicable */
  stage_scores: Record<string, Partial<Record<StageName, number>>>;
  subtask_scores: Record<string, number>;
  report_score: number;
}

export interface IccReport {
  scheme: "ours" | "baseline";
  level: "report" | "criterion";
  stage?: StageName;
  icc: number;
  ms_r: number;
  ms_c: number;
  ms_e: number;
  n: number;
  k: number;
}

/** One row of a per-stage failure-prevalence table; `fraction` arrives
 * pre-formatted to four decimals and is displayed verbatim. */
export interface PrevalenceRow {
  model: string;
  label: string;
  fraction: string;
  count: number;
  total: number;
}

export interface FailureReport {
  rater_id: string;
  threshold: number;
  low_cells: number;
  labeled_cells: number;
  stages: StageName[];
  tables: Partial<Record<StageName, PrevalenceRow[]>>;
}

export interface SubtaskDecisionResult {
  subtask: Subtask;
  review_complete: boolean;
  rubrics_started: boolean;
}

export interface CriterionDecisionResult {
  criterion: Criterion;
  pending_criteria: number;
  /** True when this decision resolved the last pending criterion and at
   * least one rejection sent its rubric back for regeneration. */
  rubrics_restarted: boolean;
}

export interface ExpertImportResult {
  accepted: number;
  rejected: { line: number; reason: string }[];
  profiles_built: { report_id: string; rater_id: string }[];
}
