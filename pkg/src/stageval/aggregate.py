"""Score rollups: criterion verdicts up to stage, subtask, and report scores.

The rules, applied uniformly: a stage score is the awarded share of the
stage's point budget scaled to 10; a subtask score is the unweighted mean
of its applicable stage scores; a report score is the unweighted mean of
its subtask scores. Stages marked not-applicable simply do not participate;
they are never counted as zero. Nothing here rounds: values are kept at
full double precision and callers round only for display.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from .errors import CompletenessError, CrossReferenceError, DegenerateInputError
from .model import (
    Criterion,
    CriterionScore,
    Rubric,
    ScoreProfile,
    Stage,
    index_criteria,
)


def stage_score(
    scores: Sequence[CriterionScore], criteria: Mapping[str, Criterion]
) -> float:
    """Awarded share of the stage's points, on a 10-point scale."""
    if not scores:
        raise DegenerateInputError("stage score over zero criterion scores")
    total_points = 0
    total_awarded = 0.0
    for s in scores:
        criterion = criteria.get(s.criterion_id)
        if criterion is None:
            raise CrossReferenceError(f"unknown criterion {s.criterion_id}")
        total_points += criterion.points
        total_awarded += s.awarded
    if total_points <= 0:
        raise DegenerateInputError("stage criteria carry no points")
    return (total_awarded / total_points) * 10.0


def subtask_score(stage_scores: Iterable[float]) -> float:
    """Unweighted mean over the subtask's applicable stage scores."""
    values = list(stage_scores)
    if not values:
        raise DegenerateInputError("subtask score over zero stage scores")
    return sum(values) / len(values)


def report_score(subtask_scores: Iterable[float]) -> float:
    """Unweighted mean over the report's subtask scores."""
    values = list(subtask_scores)
    if not values:
        raise DegenerateInputError("report score over zero subtask scores")
    return sum(values) / len(values)


def build_profile(
    report_id: str,
    rater_id: str,
    criterion_scores: Sequence[CriterionScore],
    rubrics: Mapping[str, Rubric],
) -> ScoreProfile:
    """Roll one rater's criterion verdicts up into a full score profile.

    Requires exactly one score per criterion across all rubrics; missing,
    duplicate, or unknown criterion scores fail with CompletenessError.
    """
    criteria = index_criteria(rubrics.values())

    seen: dict[str, CriterionScore] = {}
    for s in criterion_scores:
        if s.report_id != report_id or s.rater_id != rater_id:
            raise CrossReferenceError(
                f"score for ({s.report_id}, {s.rater_id}) in profile "
                f"({report_id}, {rater_id})"
            )
        if s.criterion_id not in criteria:
            raise CompletenessError(f"score for unknown criterion {s.criterion_id}")
        if s.criterion_id in seen:
            raise CompletenessError(f"duplicate score for criterion {s.criterion_id}")
        seen[s.criterion_id] = s
    missing = sorted(set(criteria) - set(seen))
    if missing:
        raise CompletenessError(
            f"missing scores for {len(missing)} criteria, first: {missing[0]}"
        )

    stage_scores: dict[tuple[str, Stage], float] = {}
    per_subtask: dict[str, list[float]] = defaultdict(list)
    for subtask_id in sorted(rubrics):
        rubric = rubrics[subtask_id]
        for stage in rubric.scored_stages():
            crits = rubric.stage_criteria[stage]
            value = stage_score([seen[c.id] for c in crits], criteria)
            stage_scores[(subtask_id, stage)] = value
            per_subtask[subtask_id].append(value)

    subtask_scores = {
        subtask_id: subtask_score(values) for subtask_id, values in per_subtask.items()
    }
    ordered = [subtask_scores[sid] for sid in sorted(subtask_scores)]
    return ScoreProfile(
        report_id=report_id,
        rater_id=rater_id,
        criterion_scores=tuple(
            seen[cid] for cid in sorted(seen)
        ),
        stage_scores=stage_scores,
        subtask_scores=subtask_scores,
        report_score=report_score(ordered),
    )


def model_stage_means(
    profiles_by_model: Mapping[str, Sequence[ScoreProfile]]
) -> dict[str, dict[Stage, float]]:
    """Mean stage score per model, over every (profile, subtask) stage cell."""
    out: dict[str, dict[Stage, float]] = {}
    for model in sorted(profiles_by_model):
        sums: dict[Stage, float] = defaultdict(float)
        counts: dict[Stage, int] = defaultdict(int)
        for profile in profiles_by_model[model]:
            for (_, stage), value in profile.stage_scores.items():
                sums[stage] += value
                counts[stage] += 1
        out[model] = {
            stage: sums[stage] / counts[stage] for stage in sorted(sums)
        }
    return out
