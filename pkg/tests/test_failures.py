"""Failure mining: taxonomy integrity, low-cell selection, prevalence tables."""

from __future__ import annotations

import json

import pytest

from stageval.aggregate import build_profile
from stageval.errors import ClassificationError
from stageval.failures import (
    DEFAULT_THRESHOLD,
    FAILURE_TAXONOMY,
    FailureAssignment,
    LowCell,
    cell_evidence,
    classify_cell,
    classify_failures,
    format_fraction,
    prevalence_table,
    render_taxonomy,
    select_low_scoring,
)
from stageval.gateway import Gateway, MockProvider
from stageval.model import Stage

from conftest import make_rubric, make_subtask, scores_for_rubric

EXPECTED_LABELS = {
    Stage.ASSUMPTION_DEVELOPMENT: [
        "Assumptions Not Checked",
        "Missing Assumption Conditions",
        "Assumption Impact Not Discussed",
        "Hidden Idealized Assumptions",
        "Unrealistic Assumptions",
    ],
    Stage.MODEL_CONSTRUCTION: [
        "Incomplete Model Structure",
        "Missing Model Derivation",
        "Unclear Variables or Symbols",
        "Solvability Not Justified",
        "Model Deviates from Task Goal",
        "Model-Assumption Conflict",
    ],
    Stage.MODEL_SOLVING: [
        "No Checkable Solution",
        "Key Solution Steps Missing",
        "Solution Not Verified",
        "Numerical Stability Not Analyzed",
        "Computationally Infeasible",
        "Inappropriate Solution Method",
    ],
    Stage.CODE_IMPLEMENTATION: [
        "Cannot Be Executed",
        "Results Not Reproducible",
        "No Code",
        "Engineering or Numerical Risks",
        "Code-Model Mismatch",
    ],
    Stage.RESULT_ANALYSIS: [
        "No Meaningful Results",
        "No Validation or Comparison",
        "Sensitivity Not Analyzed",
        "Conclusions Not Supported",
        "Results Miss the Goal",
        "Limits Not Discussed",
    ],
}


def gateway_for(fixtures):
    provider = MockProvider(fixtures)
    return Gateway(provider), provider


def cell(model="m", report="r1", rater="j1", subtask="s1",
         stage=Stage.MODEL_SOLVING, score=5.0) -> LowCell:
    return LowCell(
        model=model, report_id=report, rater_id=rater,
        subtask_id=subtask, stage=stage, score=score,
    )


class TestTaxonomy:
    def test_exact_stages(self):
        assert set(FAILURE_TAXONOMY) == set(EXPECTED_LABELS)

    @pytest.mark.parametrize("stage", sorted(EXPECTED_LABELS, key=lambda s: s.order))
    def test_exact_labels_in_order(self, stage):
        got = [entry.label for entry in FAILURE_TAXONOMY[stage]]
        assert got == EXPECTED_LABELS[stage]

    def test_labels_are_ascii(self):
        for entries in FAILURE_TAXONOMY.values():
            for entry in entries:
                assert entry.label.isascii()
                assert entry.definition.strip()

    def test_label_count_per_stage(self):
        sizes = {s.value: len(v) for s, v in FAILURE_TAXONOMY.items()}
        assert sizes == {
            "AssumptionDevelopment": 5,
            "ModelConstruction": 6,
            "ModelSolving": 6,
            "CodeImplementation": 5,
            "ResultAnalysis": 6,
        }

    def test_render_taxonomy_lists_all(self):
        text = render_taxonomy(Stage.MODEL_SOLVING)
        for label in EXPECTED_LABELS[Stage.MODEL_SOLVING]:
            assert f"- {label}:" in text


class TestSelectLowScoring:
    def _profiles(self, values_by_stage, rater="j1", report="r1"):
        sub = make_subtask()
        rubric = make_rubric(sub.id)
        fractions = {s: v / 10 for s, v in values_by_stage.items()}
        scores = scores_for_rubric(
            rubric, report, rater, fraction=0.9, fractions_by_stage=fractions
        )
        return build_profile(report, rater, scores, {sub.id: rubric}), sub

    def test_strictly_below_threshold(self):
        profile, sub = self._profiles({Stage.MODEL_SOLVING: 8.0,
                                       Stage.RESULT_ANALYSIS: 7.999})
        cells = select_low_scoring({"m": [profile]}, threshold=8.0)
        assert [c.stage for c in cells] == [Stage.RESULT_ANALYSIS]
        assert cells[0].score == pytest.approx(7.999)
        assert cells[0].score < 8.0

    def test_default_threshold(self):
        assert DEFAULT_THRESHOLD == 8.0

    def test_covers_stages_without_taxonomy(self):
        profile, _ = self._profiles({Stage.PROBLEM_IDENTIFICATION: 3.0})
        cells = select_low_scoring({"m": [profile]})
        assert Stage.PROBLEM_IDENTIFICATION in {c.stage for c in cells}

    def test_deterministic_order(self):
        p1, _ = self._profiles({Stage.MODEL_SOLVING: 1.0}, rater="j2")
        p2, _ = self._profiles({Stage.MODEL_SOLVING: 1.0}, rater="j1")
        cells = select_low_scoring({"mb": [p1, p2], "ma": [p1, p2]})
        keys = [(c.model, c.report_id, c.rater_id, c.subtask_id, c.stage.order)
                for c in cells]
        assert keys == sorted(keys)

    def test_empty_when_all_high(self):
        profile, _ = self._profiles({})
        assert select_low_scoring({"m": [profile]}) == []


class TestClassifyCell:
    def setup_method(self):
        self.cell = cell()
        self.tag = "classify:r1:s1:ModelSolving:j1"

    def test_happy_path(self):
        gw, _ = gateway_for(
            {self.tag: json.dumps({"labels": ["Solution Not Verified"]})}
        )
        assignment = classify_cell(gw, self.cell, "evidence text")
        assert assignment.labels == ("Solution Not Verified",)
        assert assignment.cell == self.cell

    def test_labels_deduplicated_in_taxonomy_order(self):
        gw, _ = gateway_for(
            {
                self.tag: json.dumps(
                    {
                        "labels": [
                            "Solution Not Verified",
                            "No Checkable Solution",
                            "Solution Not Verified",
                        ]
                    }
                )
            }
        )
        assignment = classify_cell(gw, self.cell, "e")
        assert assignment.labels == (
            "No Checkable Solution",
            "Solution Not Verified",
        )

    def test_invalid_label_then_repaired(self):
        gw, provider = gateway_for(
            {
                self.tag: [
                    json.dumps({"labels": ["Made Up Label"]}),
                    json.dumps({"labels": ["No Checkable Solution"]}),
                ]
            }
        )
        assignment = classify_cell(gw, self.cell, "e")
        assert assignment.labels == ("No Checkable Solution",)
        assert len(provider.calls) == 2
        assert "Made Up Label" in provider.calls[1].user

    def test_empty_labels_rejected(self):
        gw, provider = gateway_for({self.tag: json.dumps({"labels": []})})
        with pytest.raises(ClassificationError):
            classify_cell(gw, self.cell, "e")
        assert len(provider.calls) == 2

    def test_persistent_failure(self):
        gw, provider = gateway_for({self.tag: "garbage"})
        with pytest.raises(ClassificationError):
            classify_cell(gw, self.cell, "e")
        assert len(provider.calls) == 2

    def test_stage_without_taxonomy(self):
        gw, _ = gateway_for({})
        with pytest.raises(ClassificationError, match="taxonomy"):
            classify_cell(gw, cell(stage=Stage.PROBLEM_FORMULATION), "e")

    def test_evidence_reaches_prompt(self):
        gw, provider = gateway_for(
            {self.tag: json.dumps({"labels": ["No Code"]})}
        )
        c = cell(stage=Stage.CODE_IMPLEMENTATION)
        tag = "classify:r1:s1:CodeImplementation:j1"
        gw, provider = gateway_for({tag: json.dumps({"labels": ["No Code"]})})
        classify_cell(gw, c, "UNIQUE_EVIDENCE")
        assert "UNIQUE_EVIDENCE" in provider.calls[0].user


class TestCellEvidence:
    def test_renders_criteria_with_comments(self):
        sub = make_subtask()
        rubric = make_rubric(sub.id)
        scores = scores_for_rubric(rubric, "r1", "j1", fraction=0.5)
        profile = build_profile("r1", "j1", scores, {sub.id: rubric})
        criteria = {c.id: c for c in rubric.criteria()}
        low = cell(subtask=sub.id, stage=Stage.MODEL_SOLVING, score=5.0)
        text = cell_evidence(low, profile, criteria)
        first = rubric.stage_criteria[Stage.MODEL_SOLVING][0]
        assert first.name in text
        assert "supported by the report text" in text
        assert "PartiallyMet" in text


class TestClassifyFailures:
    def test_skips_stages_without_taxonomy(self):
        sub = make_subtask()
        rubric = make_rubric(sub.id)
        scores = scores_for_rubric(rubric, "r1", "j1", fraction=0.9,
                                   fractions_by_stage={
                                       Stage.PROBLEM_IDENTIFICATION: 0.1,
                                       Stage.MODEL_SOLVING: 0.5,
                                   })
        profile = build_profile("r1", "j1", scores, {sub.id: rubric})
        criteria = {c.id: c for c in rubric.criteria()}
        cells = select_low_scoring({"m": [profile]})
        assert {c.stage for c in cells} == {
            Stage.PROBLEM_IDENTIFICATION, Stage.MODEL_SOLVING,
        }
        tag = f"classify:r1:{sub.id}:ModelSolving:j1"
        gw, provider = gateway_for(
            {tag: json.dumps({"labels": ["No Checkable Solution"]})}
        )
        assignments = classify_failures(
            gw, cells, {("r1", "j1"): profile}, criteria
        )
        assert len(assignments) == 1
        assert assignments[0].cell.stage is Stage.MODEL_SOLVING

    def test_missing_profile_rejected(self):
        gw, _ = gateway_for({})
        with pytest.raises(ClassificationError, match="profile"):
            classify_failures(gw, [cell()], {}, {})


class TestPrevalence:
    def test_format_fraction_four_decimals(self):
        assert format_fraction(0.7) == "0.7000"
        assert format_fraction(1 / 3) == "0.3333"
        assert format_fraction(1.0) == "1.0000"

    def _assignments(self):
        return [
            FailureAssignment(
                cell(model="ma", report="r1", subtask="s1"),
                ("Solution Not Verified",),
            ),
            FailureAssignment(
                cell(model="ma", report="r1", subtask="s2"),
                ("Solution Not Verified", "No Checkable Solution"),
            ),
            FailureAssignment(
                cell(model="mb", report="r2", subtask="s1"),
                ("No Checkable Solution",),
            ),
        ]

    def test_counts_and_totals(self):
        rows = prevalence_table(self._assignments(), Stage.MODEL_SOLVING)
        by_key = {(r.model, r.label): r for r in rows}
        snv_ma = by_key[("ma", "Solution Not Verified")]
        assert (snv_ma.count, snv_ma.total) == (2, 2)
        assert snv_ma.fraction == pytest.approx(1.0)
        ncs_ma = by_key[("ma", "No Checkable Solution")]
        assert (ncs_ma.count, ncs_ma.total) == (1, 2)
        ncs_mb = by_key[("mb", "No Checkable Solution")]
        assert (ncs_mb.count, ncs_mb.total) == (1, 1)

    def test_row_ordering_by_overall_prevalence(self):
        rows = prevalence_table(self._assignments(), Stage.MODEL_SOLVING)
        # both labels appear twice overall; tie broken by taxonomy order,
        # and every model gets a row under a surviving label
        assert [(r.label, r.model) for r in rows] == [
            ("No Checkable Solution", "ma"),
            ("No Checkable Solution", "mb"),
            ("Solution Not Verified", "ma"),
            ("Solution Not Verified", "mb"),
        ]

    def test_labels_unused_overall_omitted(self):
        rows = prevalence_table(self._assignments(), Stage.MODEL_SOLVING)
        assert {r.label for r in rows} == {
            "No Checkable Solution",
            "Solution Not Verified",
        }
        # a model that never drew a label still gets an explicit zero row
        zero = [r for r in rows if (r.model, r.label)
                == ("mb", "Solution Not Verified")]
        assert zero and zero[0].count == 0 and zero[0].total == 1

    def test_other_stage_empty(self):
        assert prevalence_table(self._assignments(), Stage.RESULT_ANALYSIS) == []

    def test_to_dict_renders_fraction_string(self):
        rows = prevalence_table(self._assignments(), Stage.MODEL_SOLVING)
        d = rows[0].to_dict()
        assert d["fraction"] == format_fraction(rows[0].fraction)
        assert set(d) == {"model", "label", "fraction", "count", "total"}

    def test_duplicate_label_in_one_cell_counted_once(self):
        a = FailureAssignment(
            cell(model="ma"), ("Solution Not Verified",)
        )
        rows = prevalence_table([a], Stage.MODEL_SOLVING)
        assert rows[0].count == 1
