"""Shared builders for the test suite."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stageval.judging import DEFAULT_BANDS
from stageval.model import (
    Criterion,
    CriterionScore,
    Problem,
    Report,
    ReviewStatus,
    Rubric,
    Stage,
    Subtask,
    TaskUnderstanding,
    content_id,
)

FIXTURES_DIR = Path(__file__).parent.parent / "fixtures" / "e2e"


@pytest.fixture
def e2e_fixtures() -> dict:
    return json.loads((FIXTURES_DIR / "mock_fixtures.json").read_text())


@pytest.fixture
def e2e_manifest() -> dict:
    return json.loads((FIXTURES_DIR / "manifest.json").read_text())


def make_problem(problem_id: str = "p1", **kw) -> Problem:
    defaults = dict(
        id=problem_id,
        title="Test problem",
        statement="Model the thing and validate it.",
        attachments=(),
        method_tags=frozenset(),
        domain_tags=frozenset(),
    )
    defaults.update(kw)
    return Problem(**defaults)


def make_subtask(
    problem_id: str = "p1",
    ordinal: int = 1,
    description: str = "Do the first part.",
    status: ReviewStatus = ReviewStatus.APPROVED,
    **kw,
) -> Subtask:
    defaults = dict(
        id=content_id("subtask", problem_id, ordinal, description),
        problem_id=problem_id,
        ordinal=ordinal,
        description=description,
        depends_on=(),
        status=status,
        revision=0,
    )
    defaults.update(kw)
    return Subtask(**defaults)


def make_understanding() -> TaskUnderstanding:
    return TaskUnderstanding(
        core_goal="solve the subtask",
        expected_output="a validated model",
        key_inputs_constraints="the provided data",
        modeling_type="optimization",
        role_in_pipeline="stands alone",
    )


def make_criterion(
    subtask_id: str,
    stage: Stage,
    i: int = 0,
    points: int = 40,
    status: ReviewStatus = ReviewStatus.APPROVED,
    **kw,
) -> Criterion:
    name = kw.pop("name", f"{stage.value} check {i + 1}")
    defaults = dict(
        id=content_id("criterion", subtask_id, stage.value, i, name),
        subtask_id=subtask_id,
        stage=stage,
        name=name,
        description=f"aspect {i + 1} of {stage.value}",
        points=points,
        evaluation_focus="the relevant section",
        scoring_hint="full points for complete treatment",
        status=status,
    )
    defaults.update(kw)
    return Criterion(**defaults)


def make_rubric(
    subtask_id: str = "",
    stages: tuple[Stage, ...] = tuple(Stage),
    not_applicable: dict | None = None,
    points: tuple[int, ...] = (40, 30, 30),
    status: ReviewStatus = ReviewStatus.APPROVED,
) -> Rubric:
    """A rule-clean rubric: 3 criteria per scored stage, each summing 100."""
    subtask_id = subtask_id or make_subtask().id
    na = dict(not_applicable or {})
    stage_criteria = {
        stage: tuple(
            make_criterion(subtask_id, stage, i, p, status=status)
            for i, p in enumerate(points)
        )
        for stage in stages
        if stage not in na
    }
    return Rubric(
        subtask_id=subtask_id,
        understanding=make_understanding(),
        stage_criteria=stage_criteria,
        not_applicable=na,
    )


def make_report(
    report_id: str = "r1",
    problem_id: str = "p1",
    model_name: str = "model-x",
    body: str = "The report body with model, code, and results.",
    per_subtask_sections=None,
) -> Report:
    return Report(
        id=report_id,
        problem_id=problem_id,
        model_name=model_name,
        body=body,
        per_subtask_sections=per_subtask_sections,
    )


def scores_for_rubric(
    rubric: Rubric,
    report_id: str = "r1",
    rater_id: str = "judge-1",
    fraction: float = 0.8,
    fractions_by_stage: dict | None = None,
) -> list[CriterionScore]:
    """Band-consistent criterion scores at a uniform awarded fraction."""
    out = []
    for crit in rubric.criteria():
        f = (fractions_by_stage or {}).get(crit.stage, fraction)
        awarded = round(f * crit.points, 6)
        level = DEFAULT_BANDS.level_for_fraction(awarded / crit.points)
        out.append(
            CriterionScore(
                criterion_id=crit.id,
                report_id=report_id,
                rater_id=rater_id,
                level=level,
                awarded=awarded,
                comment="supported by the report text",
            )
        )
    return out


def judge_payload_for_rubric(
    rubric: Rubric,
    fraction: float = 0.8,
    fractions_by_stage: dict | None = None,
) -> dict:
    """A valid judge wire response covering every rubric criterion."""
    payload: dict = {}
    for stage in rubric.scored_stages():
        entries = []
        for crit in rubric.stage_criteria[stage]:
            f = (fractions_by_stage or {}).get(stage, fraction)
            awarded = round(f * crit.points, 6)
            level = DEFAULT_BANDS.level_for_fraction(awarded / crit.points)
            entries.append(
                {
                    "dimension": crit.name,
                    "comment": "grounded in the report",
                    "score": awarded,
                    "level": level.value,
                }
            )
        payload[stage.value] = entries
    return payload
