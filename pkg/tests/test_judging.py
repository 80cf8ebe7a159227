"""Judging: band tables, wire parsing, repair rounds, and baseline scoring."""

from __future__ import annotations

import json
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import band_oracle
from stageval.errors import ConsistencyError, JudgingError
from stageval.gateway import Gateway, MockProvider
from stageval.judging import (
    DEFAULT_BANDS,
    JUDGE_REPAIR_LIMIT,
    BandTable,
    check_level_consistency,
    judge_baseline,
    judge_report,
    judge_subtask,
    level_for_fraction,
    render_rubric_text,
)
from stageval.model import (
    BaselineDimension,
    Stage,
    VerdictLevel,
)

from conftest import (
    judge_payload_for_rubric,
    make_problem,
    make_report,
    make_rubric,
    make_subtask,
)


def gateway_for(fixtures) -> tuple[Gateway, MockProvider]:
    provider = MockProvider(fixtures)
    return Gateway(provider), provider


class TestBandTable:
    @pytest.mark.parametrize(
        "fraction",
        [0.0, 0.001, 0.1, 0.19999, 0.2, 0.25, 0.39999, 0.4, 0.5, 0.69999,
         0.7, 0.8, 0.89999, 0.9, 0.95, 1.0],
    )
    def test_matches_band_oracle(self, fraction):
        assert DEFAULT_BANDS.level_for_fraction(fraction).value == band_oracle(fraction)

    @given(st.floats(min_value=0, max_value=1, allow_nan=False))
    def test_property_matches_band_oracle(self, fraction):
        assert DEFAULT_BANDS.level_for_fraction(fraction).value == band_oracle(fraction)

    @pytest.mark.parametrize("fraction", [-0.01, 1.01, 2.0])
    def test_out_of_range_rejected(self, fraction):
        with pytest.raises(ValueError):
            DEFAULT_BANDS.level_for_fraction(fraction)

    def test_zero_is_its_own_band(self):
        assert DEFAULT_BANDS.level_for_fraction(0.0) is VerdictLevel.COMPLETELY_NOT_MET
        assert DEFAULT_BANDS.level_for_fraction(1e-9) is VerdictLevel.NOT_MET

    def test_intervals_partition_unit_range(self):
        intervals = {lvl: DEFAULT_BANDS.interval(lvl) for lvl in VerdictLevel}
        assert intervals[VerdictLevel.FULLY_MET] == (0.90, 1.0, True, True)
        assert intervals[VerdictLevel.ALMOST_MET] == (0.70, 0.90, True, False)
        assert intervals[VerdictLevel.PARTIALLY_MET] == (0.40, 0.70, True, False)
        assert intervals[VerdictLevel.BARELY_NOT_MET] == (0.20, 0.40, True, False)
        assert intervals[VerdictLevel.NOT_MET] == (0.0, 0.20, False, False)
        assert intervals[VerdictLevel.COMPLETELY_NOT_MET] == (0.0, 0.0, True, True)

    def test_custom_cuts_must_increase(self):
        with pytest.raises(ValueError):
            BandTable(fully_met_min=0.5, almost_met_min=0.6,
                      partially_met_min=0.4, barely_not_met_min=0.2)

    def test_module_level_helper(self):
        assert level_for_fraction(0.85) is VerdictLevel.ALMOST_MET

    def test_check_level_consistency(self):
        assert check_level_consistency(VerdictLevel.ALMOST_MET, 30, 40)
        assert not check_level_consistency(VerdictLevel.FULLY_MET, 30, 40)


class TestRenderRubricText:
    def test_contains_stages_criteria_and_na(self):
        rubric = make_rubric(not_applicable={Stage.CODE_IMPLEMENTATION: "no code"})
        text = render_rubric_text(rubric)
        for stage in Stage:
            assert stage.value in text
        first = rubric.criteria()[0]
        assert first.name in text
        assert f"max {first.points} points" in text
        assert "no code" in text


class JudgeSetup:
    def setup_method(self):
        self.problem = make_problem()
        self.subtask = make_subtask()
        self.rubric = make_rubric(self.subtask.id)
        self.report = make_report()
        self.tag = f"judge:{self.report.id}:{self.subtask.id}:judge-1"

    def run(self, fixtures, **kw):
        gw, provider = gateway_for(fixtures)
        scores = judge_subtask(
            gw, self.report, self.subtask, self.rubric, "judge-1", **kw
        )
        return scores, provider


class TestJudgeSubtask(JudgeSetup):
    def test_happy_path(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        scores, provider = self.run({self.tag: json.dumps(payload)})
        assert len(scores) == len(self.rubric.criteria())
        assert [s.criterion_id for s in scores] == [c.id for c in self.rubric.criteria()]
        assert all(s.rater_id == "judge-1" for s in scores)
        assert all(s.level is VerdictLevel.ALMOST_MET for s in scores)
        assert len(provider.calls) == 1

    def test_band_inconsistent_then_repaired(self):
        bad = judge_payload_for_rubric(self.rubric, fraction=0.8)
        bad["ModelSolving"][0]["level"] = "FullyMet"  # 0.8 fraction is AlmostMet
        good = judge_payload_for_rubric(self.rubric, fraction=0.8)
        scores, provider = self.run({self.tag: [json.dumps(bad), json.dumps(good)]})
        assert len(provider.calls) == 2
        assert "ModelSolving" in provider.calls[1].user
        assert len(scores) == 21

    def test_persistent_band_mismatch_is_consistency_error(self):
        bad = judge_payload_for_rubric(self.rubric, fraction=0.8)
        bad["ModelSolving"][0]["level"] = "FullyMet"
        with pytest.raises(ConsistencyError) as exc_info:
            self.run({self.tag: json.dumps(bad)})
        assert exc_info.value.raw_text == json.dumps(bad)

    def test_persistent_parse_failure_is_judging_error(self):
        with pytest.raises(JudgingError) as exc_info:
            self.run({self.tag: "not json"})
        assert exc_info.value.raw_text == "not json"

    def test_exactly_one_repair_round(self):
        _, provider = gateway_for({self.tag: "junk"})
        gw = Gateway(provider)
        with pytest.raises(JudgingError):
            judge_subtask(gw, self.report, self.subtask, self.rubric, "judge-1")
        assert len(provider.calls) == JUDGE_REPAIR_LIMIT + 1 == 2

    def test_missing_criterion_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        dropped = payload["ModelSolving"].pop(0)
        with pytest.raises(JudgingError, match="missing"):
            self.run({self.tag: json.dumps(payload)})

    def test_unknown_stage_key_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["MadeUpStage"] = payload["ModelSolving"]
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_unknown_dimension_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["dimension"] = "invented criterion"
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_non_numeric_score_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["score"] = "thirty"
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_boolean_score_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["score"] = True
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_unknown_level_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["level"] = "SortOfMet"
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_awarded_above_points_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["score"] = 41
        with pytest.raises(JudgingError):
            self.run({self.tag: json.dumps(payload)})

    def test_missing_comment_below_fully_met_rejected(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        payload["ModelSolving"][0]["comment"] = ""
        with pytest.raises(JudgingError, match="comment"):
            self.run({self.tag: json.dumps(payload)})

    def test_na_stage_not_expected_in_answer(self):
        rubric = make_rubric(
            self.subtask.id,
            not_applicable={Stage.CODE_IMPLEMENTATION: "no code here"},
        )
        payload = judge_payload_for_rubric(rubric, fraction=0.8)
        gw, _ = gateway_for({self.tag: json.dumps(payload)})
        scores = judge_subtask(gw, self.report, self.subtask, rubric, "judge-1")
        assert len(scores) == 18
        # answering for the N/A stage is a contract violation
        bad = dict(payload)
        bad["CodeImplementation"] = payload["ModelSolving"]
        gw, _ = gateway_for({self.tag: json.dumps(bad)})
        with pytest.raises(JudgingError):
            judge_subtask(gw, self.report, self.subtask, rubric, "judge-1")

    def test_per_subtask_sections_replace_body(self):
        report = make_report(
            per_subtask_sections={self.subtask.id: "ONLY_THIS_SECTION"}
        )
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        tag = f"judge:{report.id}:{self.subtask.id}:judge-1"
        gw, provider = gateway_for({tag: json.dumps(payload)})
        judge_subtask(gw, report, self.subtask, self.rubric, "judge-1")
        user = provider.calls[0].user
        assert "ONLY_THIS_SECTION" in user
        assert report.body not in user

    def test_twenty_one_criteria_parse_under_a_second(self):
        payload = judge_payload_for_rubric(self.rubric, fraction=0.8)
        fixtures = {self.tag: json.dumps(payload)}
        start = time.perf_counter()
        scores, _ = self.run(fixtures)
        elapsed = time.perf_counter() - start
        assert len(scores) == 21
        assert elapsed < 1.0


class TestJudgeReport(JudgeSetup):
    def test_orders_by_subtask_ordinal(self):
        s1 = make_subtask(ordinal=1, description="one")
        s2 = make_subtask(ordinal=2, description="two")
        r1 = make_rubric(s1.id)
        r2 = make_rubric(s2.id)
        fixtures = {
            f"judge:{self.report.id}:{s1.id}:judge-1": json.dumps(
                judge_payload_for_rubric(r1, fraction=0.8)
            ),
            f"judge:{self.report.id}:{s2.id}:judge-1": json.dumps(
                judge_payload_for_rubric(r2, fraction=0.9)
            ),
        }
        gw, provider = gateway_for(fixtures)
        scores = judge_report(
            gw, self.report, [s2, s1], {s1.id: r1, s2.id: r2}, "judge-1"
        )
        assert len(scores) == 42
        assert provider.calls[0].tag.endswith(f"{s1.id}:judge-1")

    def test_missing_rubric(self):
        s1 = make_subtask(ordinal=1)
        gw, _ = gateway_for({})
        with pytest.raises(JudgingError, match="rubric"):
            judge_report(gw, self.report, [s1], {}, "judge-1")


class TestJudgeBaseline:
    def setup_method(self):
        self.problem = make_problem()
        self.report = make_report()
        self.tag = f"baseline:{self.report.id}:judge-1"

    def payload(self, pa=8.0, mr=7.5, ps=9.0, rb=8.5):
        return {
            "ProblemAnalysis": pa,
            "ModelingRigor": mr,
            "PracticalityScientificity": ps,
            "ResultBias": rb,
        }

    def test_happy_path(self):
        gw, _ = gateway_for({self.tag: json.dumps(self.payload())})
        score = judge_baseline(gw, self.report, self.problem, "judge-1")
        assert score.dims[BaselineDimension.PROBLEM_ANALYSIS] == 8.0
        assert score.average == pytest.approx((8.0 + 7.5 + 9.0 + 8.5) / 4)

    def test_missing_dimension_repaired(self):
        bad = self.payload()
        del bad["ResultBias"]
        gw, provider = gateway_for(
            {self.tag: [json.dumps(bad), json.dumps(self.payload())]}
        )
        score = judge_baseline(gw, self.report, self.problem, "judge-1")
        assert score.average == pytest.approx(8.25)
        assert len(provider.calls) == 2
        assert "ResultBias" in provider.calls[1].user

    def test_out_of_range_rejected(self):
        gw, _ = gateway_for({self.tag: json.dumps(self.payload(pa=11))})
        with pytest.raises(JudgingError):
            judge_baseline(gw, self.report, self.problem, "judge-1")

    def test_unknown_dimension_rejected(self):
        bad = self.payload()
        bad["Creativity"] = 9.0
        gw, _ = gateway_for({self.tag: json.dumps(bad)})
        with pytest.raises(JudgingError, match="Creativity"):
            judge_baseline(gw, self.report, self.problem, "judge-1")

    def test_exactly_one_repair(self):
        gw, provider = gateway_for({self.tag: "junk"})
        with pytest.raises(JudgingError):
            judge_baseline(gw, self.report, self.problem, "judge-1")
        assert len(provider.calls) == 2
