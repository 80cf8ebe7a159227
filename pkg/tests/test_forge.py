"""Generation flows: decomposition, rubric forging, and the revision protocol."""

from __future__ import annotations

import json

import pytest

from stageval.errors import GenerationError, StateError
from stageval.forge import (
    FORGE_REPAIR_LIMIT,
    apply_revision,
    decompose,
    generate_rubric,
)
from stageval.gateway import Gateway, MockProvider
from stageval.model import ReviewStatus, Stage, validate_rubric

from conftest import make_criterion, make_problem, make_subtask


def gateway_for(fixtures) -> tuple[Gateway, MockProvider]:
    provider = MockProvider(fixtures)
    return Gateway(provider), provider


def subtasks_json(*descriptions, depends=None):
    subtasks = []
    for i, d in enumerate(descriptions):
        entry = {"description": d}
        if depends and i in depends:
            entry["depends_on"] = depends[i]
        subtasks.append(entry)
    return json.dumps({"subtasks": subtasks})


def valid_rubric_json(na_stage: str = "") -> str:
    criteria: dict = {}
    for stage in Stage:
        if na_stage and stage.value == na_stage:
            criteria[stage.value] = {"not_applicable_reason": "not requested here"}
            continue
        criteria[stage.value] = [
            {
                "sub_criteria": f"{stage.value} item {i}",
                "description": "what to check",
                "score": points,
                "evaluation_focus": "the relevant part",
                "scoring_hint": "full points only when complete",
            }
            for i, points in enumerate((40, 30, 30))
        ]
    return json.dumps(
        {
            "task_understanding": {
                "core_goal": "g",
                "expected_output": "o",
                "key_inputs_constraints": "k",
                "modeling_type": "m",
                "role_in_pipeline": "r",
            },
            "evaluation_criteria": criteria,
        }
    )


class TestApplyRevision:
    def test_approve_generated(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        revised, audit = apply_revision(sub, "approve", editor="alice")
        assert revised.status is ReviewStatus.APPROVED
        assert revised.revision == sub.revision + 1
        assert audit.action == "approve"
        assert audit.before_status == "generated"
        assert audit.after_status == "approved"
        assert audit.before_revision == sub.revision
        assert audit.after_revision == revised.revision
        assert audit.editor == "alice"

    def test_edit_subtask_description(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        revised, audit = apply_revision(
            sub, "edit", edits={"description": "sharper wording"}
        )
        assert revised.status is ReviewStatus.EDITED
        assert revised.description == "sharper wording"
        assert audit.edits == {"description": "sharper wording"}

    def test_reject_generated(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        revised, _ = apply_revision(sub, "reject")
        assert revised.status is ReviewStatus.REJECTED

    def test_edited_can_be_approved(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        edited, _ = apply_revision(sub, "edit", edits={"description": "v2"})
        approved, _ = apply_revision(edited, "approve")
        assert approved.status is ReviewStatus.APPROVED
        assert approved.revision == sub.revision + 2

    def test_approved_is_terminal(self):
        sub = make_subtask(status=ReviewStatus.APPROVED)
        for action in ("approve", "edit", "reject"):
            with pytest.raises(StateError):
                apply_revision(sub, action, edits={"description": "x"}
                               if action == "edit" else None)

    def test_rejected_is_terminal(self):
        sub = make_subtask(status=ReviewStatus.REJECTED)
        with pytest.raises(StateError):
            apply_revision(sub, "approve")

    def test_unknown_action(self):
        with pytest.raises(ValueError, match="action"):
            apply_revision(make_subtask(status=ReviewStatus.GENERATED), "promote")

    def test_edits_only_allowed_on_edit(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        with pytest.raises(ValueError):
            apply_revision(sub, "approve", edits={"description": "x"})

    def test_edit_requires_edits(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        with pytest.raises(ValueError):
            apply_revision(sub, "edit")

    def test_non_editable_field_rejected(self):
        sub = make_subtask(status=ReviewStatus.GENERATED)
        with pytest.raises(ValueError, match="ordinal"):
            apply_revision(sub, "edit", edits={"ordinal": 9})

    def test_criterion_editable_fields(self):
        crit = make_criterion("s1", Stage.MODEL_SOLVING, status=ReviewStatus.GENERATED)
        revised, _ = apply_revision(
            crit, "edit", edits={"points": 35, "name": "sharper"}
        )
        assert revised.points == 35
        assert revised.name == "sharper"
        assert revised.status is ReviewStatus.EDITED

    def test_criterion_subtask_id_not_editable(self):
        crit = make_criterion("s1", Stage.MODEL_SOLVING, status=ReviewStatus.GENERATED)
        with pytest.raises(ValueError):
            apply_revision(crit, "edit", edits={"subtask_id": "other"})


class TestDecompose:
    def test_happy_path(self):
        problem = make_problem()
        gw, provider = gateway_for(
            {f"decompose:{problem.id}": subtasks_json("first part", "second part",
                                                      depends={1: [1]})}
        )
        subtasks, unchanged = decompose(gw, problem)
        assert [s.ordinal for s in subtasks] == [1, 2]
        assert [s.description for s in subtasks] == ["first part", "second part"]
        assert subtasks[1].depends_on == (subtasks[0].id,)
        assert all(s.status is ReviewStatus.GENERATED for s in subtasks)
        assert unchanged is False
        assert len(provider.calls) == 1

    def test_repair_after_malformed_json(self):
        problem = make_problem()
        tag = f"decompose:{problem.id}"
        gw, provider = gateway_for(
            {tag: ["not json at all", subtasks_json("only part")]}
        )
        subtasks, _ = decompose(gw, problem)
        assert len(subtasks) == 1
        assert len(provider.calls) == 2
        # repair prompt carries the rejection reasons
        assert "JSON" in provider.calls[1].user or "json" in provider.calls[1].user

    def test_persistent_failure_exhausts_repairs(self):
        problem = make_problem()
        gw, provider = gateway_for({f"decompose:{problem.id}": "garbage"})
        with pytest.raises(GenerationError) as exc_info:
            decompose(gw, problem)
        assert len(provider.calls) == FORGE_REPAIR_LIMIT + 1
        assert len(exc_info.value.attempts) == FORGE_REPAIR_LIMIT + 1

    def test_forward_dependency_rejected_then_repaired(self):
        problem = make_problem()
        bad = json.dumps(
            {"subtasks": [{"description": "a", "depends_on": [2]},
                          {"description": "b"}]}
        )
        tag = f"decompose:{problem.id}"
        gw, provider = gateway_for({tag: [bad, subtasks_json("a", "b")]})
        subtasks, _ = decompose(gw, problem)
        assert len(subtasks) == 2
        assert len(provider.calls) == 2
        assert "depends_on" in provider.calls[1].user

    def test_empty_description_rejected(self):
        problem = make_problem()
        gw, provider = gateway_for(
            {f"decompose:{problem.id}": subtasks_json("")}
        )
        with pytest.raises(GenerationError):
            decompose(gw, problem)

    def test_empty_subtask_list_rejected(self):
        problem = make_problem()
        gw, _ = gateway_for({f"decompose:{problem.id}": json.dumps({"subtasks": []})})
        with pytest.raises(GenerationError):
            decompose(gw, problem)

    def test_guidance_and_previous_reach_prompt(self):
        problem = make_problem()
        previous = [make_subtask(description="old split")]
        gw, provider = gateway_for(
            {f"decompose:{problem.id}": subtasks_json("new split")}
        )
        decompose(gw, problem, guidance="merge the halves", previous=previous)
        user = provider.calls[0].user
        assert "merge the halves" in user
        assert "old split" in user

    def test_unchanged_flag_when_regeneration_repeats(self):
        problem = make_problem()
        previous = [make_subtask(description="same text")]
        gw, _ = gateway_for({f"decompose:{problem.id}": subtasks_json("same text")})
        _, unchanged = decompose(gw, problem, guidance="try again", previous=previous)
        assert unchanged is True

    def test_ids_are_content_addressed(self):
        problem = make_problem()
        fixtures = {f"decompose:{problem.id}": subtasks_json("alpha", "beta")}
        first, _ = decompose(gateway_for(fixtures)[0], problem)
        second, _ = decompose(gateway_for(fixtures)[0], problem)
        assert [s.id for s in first] == [s.id for s in second]


class TestGenerateRubric:
    def test_happy_path(self):
        problem = make_problem()
        sub = make_subtask()
        gw, provider = gateway_for({f"rubric:{sub.id}": valid_rubric_json()})
        rubric = generate_rubric(gw, problem, sub)
        assert validate_rubric(rubric) == []
        assert rubric.subtask_id == sub.id
        assert len(rubric.criteria()) == 21
        assert all(c.status is ReviewStatus.GENERATED for c in rubric.criteria())

    def test_not_applicable_stage(self):
        problem = make_problem()
        sub = make_subtask()
        gw, _ = gateway_for(
            {f"rubric:{sub.id}": valid_rubric_json(na_stage="CodeImplementation")}
        )
        rubric = generate_rubric(gw, problem, sub)
        assert Stage.CODE_IMPLEMENTATION in rubric.not_applicable
        assert validate_rubric(rubric) == []

    def test_bad_points_sum_repaired(self):
        problem = make_problem()
        sub = make_subtask()
        bad = json.loads(valid_rubric_json())
        bad["evaluation_criteria"]["ModelSolving"][0]["score"] = 39
        gw, provider = gateway_for(
            {f"rubric:{sub.id}": [json.dumps(bad), valid_rubric_json()]}
        )
        rubric = generate_rubric(gw, problem, sub)
        assert validate_rubric(rubric) == []
        assert len(provider.calls) == 2
        assert "points sum" in provider.calls[1].user

    def test_persistent_invalid_rubric(self):
        problem = make_problem()
        sub = make_subtask()
        bad = json.loads(valid_rubric_json())
        del bad["evaluation_criteria"]["ResultAnalysis"]
        gw, provider = gateway_for({f"rubric:{sub.id}": json.dumps(bad)})
        with pytest.raises(GenerationError) as exc_info:
            generate_rubric(gw, problem, sub)
        assert len(provider.calls) == FORGE_REPAIR_LIMIT + 1
        assert any(
            "ResultAnalysis" in p
            for attempt in exc_info.value.attempts
            for p in attempt.problems
        )

    def test_missing_understanding_field_rejected(self):
        problem = make_problem()
        sub = make_subtask()
        bad = json.loads(valid_rubric_json())
        del bad["task_understanding"]["core_goal"]
        gw, _ = gateway_for({f"rubric:{sub.id}": json.dumps(bad)})
        with pytest.raises(GenerationError):
            generate_rubric(gw, problem, sub)

    def test_earlier_subtasks_in_prompt_later_excluded(self):
        problem = make_problem()
        s1 = make_subtask(ordinal=1, description="earlier work")
        s2 = make_subtask(ordinal=2, description="current work")
        s3 = make_subtask(ordinal=3, description="later work")
        gw, provider = gateway_for({f"rubric:{s2.id}": valid_rubric_json()})
        generate_rubric(gw, problem, s2, previous_subtasks=[s1, s2, s3])
        user = provider.calls[0].user
        assert "earlier work" in user
        assert "later work" not in user

    def test_criterion_ids_stable(self):
        problem = make_problem()
        sub = make_subtask()
        fixtures = {f"rubric:{sub.id}": valid_rubric_json()}
        r1 = generate_rubric(gateway_for(fixtures)[0], problem, sub)
        r2 = generate_rubric(gateway_for(fixtures)[0], problem, sub)
        assert [c.id for c in r1.criteria()] == [c.id for c in r2.criteria()]
