"""Failure-cause mining over low-scoring stage results.

Mining runs in three steps: select every (report, subtask, stage) cell
whose stage score falls strictly below a threshold, have a model label
each cell with causes drawn from a fixed per-stage taxonomy, then tabulate
label prevalence per generator model. The taxonomy covers the five stages
where a grounded cause can be named from grading evidence; earlier stages
still show up in selection but are not labeled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .errors import ClassificationError, JsonExtractionError
from .gateway import ChatRequest, Gateway, extract_json_block
from .model import Criterion, ScoreProfile, Stage
from .prompts import get_template

logger = logging.getLogger(__name__)

CLASSIFY_REPAIR_LIMIT = 1

DEFAULT_THRESHOLD = 8.0

ArchiveFn = Callable[[str, dict], None]


@dataclass(frozen=True)
class FailureLabel:
    """One taxonomy entry: the exact label text and what it covers."""

    label: str
    definition: str


FAILURE_TAXONOMY: dict[Stage, tuple[FailureLabel, ...]] = {
    Stage.ASSUMPTION_DEVELOPMENT: (
        FailureLabel(
            "Assumptions Not Checked",
            "assumptions are stated but never tested or examined for validity",
        ),
        FailureLabel(
            "Missing Assumption Conditions",
            "the conditions under which an assumption holds are not spelled out",
        ),
        FailureLabel(
            "Assumption Impact Not Discussed",
            "no discussion of how the assumptions shape or limit the results",
        ),
        FailureLabel(
            "Hidden Idealized Assumptions",
            "idealizations are baked into the model without being declared",
        ),
        FailureLabel(
            "Unrealistic Assumptions",
            "stated assumptions contradict the real setting of the problem",
        ),
    ),
    Stage.MODEL_CONSTRUCTION: (
        FailureLabel(
            "Incomplete Model Structure",
            "parts of the model needed for the task are absent",
        ),
        FailureLabel(
            "Missing Model Derivation",
            "equations appear without the reasoning that produces them",
        ),
        FailureLabel(
            "Unclear Variables or Symbols",
            "variables or symbols are undefined, ambiguous, or inconsistent",
        ),
        FailureLabel(
            "Solvability Not Justified",
            "no argument that the model can actually be solved as posed",
        ),
        FailureLabel(
            "Model Deviates from Task Goal",
            "the model answers something other than what the subtask asks",
        ),
        FailureLabel(
            "Model-Assumption Conflict",
            "the model contradicts assumptions made earlier in the report",
        ),
    ),
    Stage.MODEL_SOLVING: (
        FailureLabel(
            "No Checkable Solution",
            "no solution is presented in a form anyone could verify",
        ),
        FailureLabel(
            "Key Solution Steps Missing",
            "essential steps between model and answer are skipped",
        ),
        FailureLabel(
            "Solution Not Verified",
            "the obtained solution is never checked against the model or data",
        ),
        FailureLabel(
            "Numerical Stability Not Analyzed",
            "no attention to conditioning, convergence, or numerical error",
        ),
        FailureLabel(
            "Computationally Infeasible",
            "the proposed procedure could not run at the problem's scale",
        ),
        FailureLabel(
            "Inappropriate Solution Method",
            "the chosen method does not fit the model or the data",
        ),
    ),
    Stage.CODE_IMPLEMENTATION: (
        FailureLabel(
            "Cannot Be Executed",
            "the provided code would not run as given",
        ),
        FailureLabel(
            "Results Not Reproducible",
            "code and narrative do not reproduce the reported numbers",
        ),
        FailureLabel(
            "No Code",
            "no implementation is provided where one is required",
        ),
        FailureLabel(
            "Engineering or Numerical Risks",
            "the implementation carries correctness or precision hazards",
        ),
        FailureLabel(
            "Code-Model Mismatch",
            "what the code computes differs from the stated model",
        ),
    ),
    Stage.RESULT_ANALYSIS: (
        FailureLabel(
            "No Meaningful Results",
            "outputs are missing or too vague to mean anything",
        ),
        FailureLabel(
            "No Validation or Comparison",
            "results are never validated or compared against anything",
        ),
        FailureLabel(
            "Sensitivity Not Analyzed",
            "no check of how results move when inputs or parameters change",
        ),
        FailureLabel(
            "Conclusions Not Supported",
            "conclusions go beyond what the presented results support",
        ),
        FailureLabel(
            "Results Miss the Goal",
            "the results do not answer the question the subtask poses",
        ),
        FailureLabel(
            "Limits Not Discussed",
            "no discussion of where the results stop being trustworthy",
        ),
    ),
}


@dataclass(frozen=True)
class LowCell:
    """One below-threshold (model, report, rater, subtask, stage) score."""

    model: str
    report_id: str
    rater_id: str
    subtask_id: str
    stage: Stage
    score: float

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "report_id": self.report_id,
            "rater_id": self.rater_id,
            "subtask_id": self.subtask_id,
            "stage": self.stage.value,
            "score": self.score,
        }


@dataclass(frozen=True)
class FailureAssignment:
    """Taxonomy labels assigned to one low-scoring cell."""

    cell: LowCell
    labels: tuple[str, ...]

    def to_dict(self) -> dict:
        d = self.cell.to_dict()
        d["labels"] = list(self.labels)
        return d


def select_low_scoring(
    profiles_by_model: Mapping[str, Sequence[ScoreProfile]],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[LowCell]:
    """Every stage cell scoring strictly below the threshold.

    Output order is deterministic: model, report, rater, subtask, stage.
    """
    cells: list[LowCell] = []
    for model in sorted(profiles_by_model):
        for profile in sorted(
            profiles_by_model[model], key=lambda p: (p.report_id, p.rater_id)
        ):
            for (subtask_id, stage), value in sorted(
                profile.stage_scores.items(), key=lambda kv: (kv[0][0], kv[0][1].order)
            ):
                if value < threshold:
                    cells.append(
                        LowCell(
                            model=model,
                            report_id=profile.report_id,
                            rater_id=profile.rater_id,
                            subtask_id=subtask_id,
                            stage=stage,
                            score=value,
                        )
                    )
    return cells


def render_taxonomy(stage: Stage) -> str:
    return "\n".join(
        f"- {entry.label}: {entry.definition}" for entry in FAILURE_TAXONOMY[stage]
    )


def cell_evidence(
    cell: LowCell,
    profile: ScoreProfile,
    criteria: Mapping[str, Criterion],
) -> str:
    """The grader's comments and awarded fractions behind one low cell."""
    lines: list[str] = []
    for s in profile.criterion_scores:
        criterion = criteria.get(s.criterion_id)
        if criterion is None:
            continue
        if criterion.subtask_id != cell.subtask_id or criterion.stage is not cell.stage:
            continue
        comment = s.comment.strip() or "no evidence"
        lines.append(
            f"- {criterion.name} ({_fmt(s.awarded)}/{criterion.points}, "
            f"{s.level.value}): {comment}"
        )
    return "\n".join(lines) if lines else "- no evidence"


def _fmt(x: float) -> str:
    return f"{x:g}"


def classify_cell(
    gateway: Gateway,
    cell: LowCell,
    evidence: str,
    language: str = "en",
    seed: Optional[int] = None,
    archive: Optional[ArchiveFn] = None,
) -> FailureAssignment:
    """Label one low cell with taxonomy causes, with one repair round.

    Returned labels are deduplicated and kept in taxonomy order. Raises
    ClassificationError when valid labels cannot be obtained.
    """
    taxonomy = FAILURE_TAXONOMY.get(cell.stage)
    if not taxonomy:
        raise ClassificationError(f"stage {cell.stage.value} has no failure taxonomy")
    allowed = [entry.label for entry in taxonomy]

    template = get_template("classify", language)
    system, user = template.render(
        stage=cell.stage.value,
        taxonomy=render_taxonomy(cell.stage),
        evidence=evidence,
    )
    tag = (
        f"classify:{cell.report_id}:{cell.subtask_id}:{cell.stage.value}:{cell.rater_id}"
    )

    attempt_user = user
    last_problems: list[str] = []
    for attempt in range(CLASSIFY_REPAIR_LIMIT + 1):
        request = ChatRequest(
            system=system,
            user=attempt_user,
            seed=seed,
            response_format_hint="json_object",
            tag=tag,
        )
        response = gateway.complete(request)
        if archive is not None:
            archive(
                tag,
                {
                    "kind": "classify",
                    "attempt": attempt,
                    "system": system,
                    "user": attempt_user,
                    "response": response.text,
                    "cached": response.cached,
                },
            )

        problems: list[str] = []
        labels: list[str] = []
        try:
            payload = extract_json_block(response.text)
        except JsonExtractionError as exc:
            problems.append(f"answer is not a JSON object: {exc}")
            payload = {}
        raw = payload.get("labels")
        if not isinstance(raw, list) or not raw:
            problems.append("'labels' must be a non-empty list")
            raw = []
        for item in raw:
            if item not in allowed:
                problems.append(f"label {item!r} is not in the allowed list")
            elif item not in labels:
                labels.append(item)

        if not problems and labels:
            ordered = tuple(l for l in allowed if l in labels)
            return FailureAssignment(cell=cell, labels=ordered)

        last_problems = problems
        if attempt < CLASSIFY_REPAIR_LIMIT:
            listed = "\n".join(f"- {p}" for p in problems)
            attempt_user = (
                f"{user}\n\n"
                f"Your previous answer was rejected for these problems:\n{listed}\n"
                f"Return corrected JSON of the same shape, using only the "
                f"allowed labels."
            )

    raise ClassificationError(
        f"classification for {tag} still invalid after repair: "
        + "; ".join(last_problems)
    )


def classify_failures(
    gateway: Gateway,
    cells: Sequence[LowCell],
    profiles: Mapping[tuple[str, str], ScoreProfile],
    criteria: Mapping[str, Criterion],
    language: str = "en",
    seed: Optional[int] = None,
    archive: Optional[ArchiveFn] = None,
) -> list[FailureAssignment]:
    """Label every taxonomy-covered low cell.

    ``profiles`` is keyed by (report_id, rater_id); cells for stages
    without a taxonomy are skipped.
    """
    assignments: list[FailureAssignment] = []
    for cell in cells:
        if cell.stage not in FAILURE_TAXONOMY:
            continue
        profile = profiles.get((cell.report_id, cell.rater_id))
        if profile is None:
            raise ClassificationError(
                f"no profile for ({cell.report_id}, {cell.rater_id})"
            )
        evidence = cell_evidence(cell, profile, criteria)
        assignments.append(
            classify_cell(
                gateway, cell, evidence, language=language, seed=seed, archive=archive
            )
        )
    return assignments


@dataclass(frozen=True)
class PrevalenceRow:
    """How often one label hits one model's low cells at a stage."""

    model: str
    label: str
    fraction: float
    count: int
    total: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "label": self.label,
            "fraction": format_fraction(self.fraction),
            "count": self.count,
            "total": self.total,
        }


def format_fraction(x: float) -> str:
    return f"{x:.4f}"


def prevalence_table(
    assignments: Sequence[FailureAssignment], stage: Stage
) -> list[PrevalenceRow]:
    """Per-model label prevalence at one stage.

    The denominator is the model's labeled low-cell count at the stage; a
    (cell, label) pair counts once no matter how often it was suggested.
    Rows are ordered by overall label prevalence, highest first, breaking
    ties by taxonomy order, then by model name.
    """
    taxonomy = [entry.label for entry in FAILURE_TAXONOMY.get(stage, ())]
    at_stage = [a for a in assignments if a.cell.stage is stage]

    totals: dict[str, int] = {}
    counts: dict[tuple[str, str], int] = {}
    overall: dict[str, int] = {label: 0 for label in taxonomy}
    for a in at_stage:
        totals[a.cell.model] = totals.get(a.cell.model, 0) + 1
        for label in set(a.labels):
            counts[(a.cell.model, label)] = counts.get((a.cell.model, label), 0) + 1
            overall[label] += 1

    grand_total = sum(totals.values())
    if grand_total == 0:
        return []

    def label_rank(label: str) -> tuple[float, int]:
        return (-overall[label] / grand_total, taxonomy.index(label))

    rows: list[PrevalenceRow] = []
    for label in sorted(taxonomy, key=label_rank):
        if overall[label] == 0:
            continue
        for model in sorted(totals):
            count = counts.get((model, label), 0)
            rows.append(
                PrevalenceRow(
                    model=model,
                    label=label,
                    fraction=count / totals[model],
                    count=count,
                    total=totals[model],
                )
            )
    return rows
