"""Regenerate the committed offline fixtures under fixtures/e2e/.

The fixtures drive the deterministic end-to-end pipeline run (the `e2e`
CLI command and the service tests) without any network access. Everything
is derived programmatically from the library's own id and band rules, so
regenerating after a rule change keeps the fixtures consistent.

Usage: python3 scripts/gen_fixtures.py [output_dir]
"""

from __future__ import annotations

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from stageval.judging import DEFAULT_BANDS
from stageval.model import Stage, content_id

PROBLEM_ID = "p1"
RUN_ID = "e2e"
RATERS = ["judge-a", "judge-b"]
STAGE_POINTS = (40, 30, 30)

SUBTASK_DESCRIPTIONS = [
    "Build a demand forecasting model for the city's shared bicycles using "
    "the provided trip records, producing hourly demand estimates per district.",
    "Design a rebalancing plan that moves bicycles between districts overnight, "
    "minimizing truck distance while meeting the forecast demand from the "
    "previous subtask.",
]

PROBLEM_STATEMENT = (
    "A city operates a shared bicycle fleet across twelve districts. Trip "
    "records for the past year are available. First, forecast hourly bicycle "
    "demand per district. Second, plan overnight rebalancing truck routes so "
    "that every district opens the day with enough bicycles, at minimum total "
    "truck distance. Justify all modeling choices and validate the results."
)

REPORT_BODIES = {
    "model-a-r1": (
        "# Demand forecast and rebalancing plan\n\n"
        "We fit a Poisson regression with hourly, weekday, and weather "
        "features to the trip records, validate it on a held-out month, and "
        "then formulate rebalancing as a capacitated vehicle routing problem "
        "solved with a savings heuristic plus 2-opt improvement. Code and "
        "sensitivity checks are included in the appendix."
    ),
    "model-b-r1": (
        "# Bicycle study\n\n"
        "We assume demand is constant across districts and fit a single "
        "moving average. Rebalancing is sketched as moving bicycles from "
        "full to empty districts; no routing model or code is given. Results "
        "are described qualitatively without validation."
    ),
}

# per (report, subtask ordinal, rater): awarded fraction for each scored stage
FRACTIONS = {
    ("model-a-r1", 1, "judge-a"): {
        "ProblemIdentification": 0.95,
        "ProblemFormulation": 0.90,
        "AssumptionDevelopment": 0.85,
        "ModelConstruction": 0.90,
        "ModelSolving": 0.55,
        "CodeImplementation": 0.80,
        "ResultAnalysis": 0.90,
    },
    ("model-a-r1", 2, "judge-a"): {
        "ProblemIdentification": 0.90,
        "ProblemFormulation": 0.85,
        "AssumptionDevelopment": 0.90,
        "ModelConstruction": 0.95,
        "ModelSolving": 0.85,
        "ResultAnalysis": 0.90,
    },
    ("model-a-r1", 1, "judge-b"): {
        "ProblemIdentification": 0.90,
        "ProblemFormulation": 0.95,
        "AssumptionDevelopment": 0.80,
        "ModelConstruction": 0.85,
        "ModelSolving": 0.60,
        "CodeImplementation": 0.85,
        "ResultAnalysis": 0.85,
    },
    ("model-a-r1", 2, "judge-b"): {
        "ProblemIdentification": 0.85,
        "ProblemFormulation": 0.90,
        "AssumptionDevelopment": 0.85,
        "ModelConstruction": 0.90,
        "ModelSolving": 0.80,
        "ResultAnalysis": 0.95,
    },
    ("model-b-r1", 1, "judge-a"): {
        "ProblemIdentification": 0.85,
        "ProblemFormulation": 0.80,
        "AssumptionDevelopment": 0.45,
        "ModelConstruction": 0.80,
        "ModelSolving": 0.80,
        "CodeImplementation": 0.50,
        "ResultAnalysis": 0.75,
    },
    ("model-b-r1", 2, "judge-a"): {
        "ProblemIdentification": 0.80,
        "ProblemFormulation": 0.80,
        "AssumptionDevelopment": 0.70,
        "ModelConstruction": 0.80,
        "ModelSolving": 0.65,
        "ResultAnalysis": 0.55,
    },
    ("model-b-r1", 1, "judge-b"): {
        "ProblemIdentification": 0.80,
        "ProblemFormulation": 0.85,
        "AssumptionDevelopment": 0.50,
        "ModelConstruction": 0.75,
        "ModelSolving": 0.75,
        "CodeImplementation": 0.45,
        "ResultAnalysis": 0.70,
    },
    ("model-b-r1", 2, "judge-b"): {
        "ProblemIdentification": 0.85,
        "ProblemFormulation": 0.75,
        "AssumptionDevelopment": 0.65,
        "ModelConstruction": 0.85,
        "ModelSolving": 0.60,
        "ResultAnalysis": 0.60,
    },
}

BASELINES = {
    ("model-a-r1", "judge-a"): (8.5, 8.0, 8.5, 9.0),
    ("model-a-r1", "judge-b"): (9.0, 8.5, 8.0, 8.5),
    ("model-b-r1", "judge-a"): (6.0, 5.5, 6.5, 6.0),
    ("model-b-r1", "judge-b"): (6.5, 5.0, 6.0, 6.5),
}

# labels planted for the mining rater's (judge-a) low cells
CLASSIFY_LABELS = {
    ("model-a-r1", 1, "ModelSolving"): ["Solution Not Verified"],
    ("model-b-r1", 1, "AssumptionDevelopment"): [
        "Unrealistic Assumptions",
        "Assumptions Not Checked",
    ],
    ("model-b-r1", 1, "CodeImplementation"): ["No Code"],
    ("model-b-r1", 1, "ResultAnalysis"): ["No Validation or Comparison"],
    ("model-b-r1", 2, "AssumptionDevelopment"): ["Missing Assumption Conditions"],
    ("model-b-r1", 2, "ModelSolving"): ["Key Solution Steps Missing"],
    ("model-b-r1", 2, "ResultAnalysis"): [
        "Results Miss the Goal",
        "No Validation or Comparison",
    ],
}


def subtask_ids() -> list[str]:
    return [
        content_id("subtask", PROBLEM_ID, i, desc)
        for i, desc in enumerate(SUBTASK_DESCRIPTIONS, start=1)
    ]


def criterion_name(stage: Stage, i: int) -> str:
    return f"{stage.value} check {i + 1}"


def rubric_payload(ordinal: int) -> dict:
    na_code = ordinal == 2
    criteria: dict = {}
    for stage in Stage:
        if na_code and stage is Stage.CODE_IMPLEMENTATION:
            criteria[stage.value] = {
                "not_applicable_reason": (
                    "the rebalancing plan is evaluated on its formulation; no "
                    "code deliverable is requested for this subtask"
                )
            }
            continue
        criteria[stage.value] = [
            {
                "sub_criteria": criterion_name(stage, i),
                "description": f"Checks aspect {i + 1} of {stage.value} "
                f"for subtask {ordinal}.",
                "score": STAGE_POINTS[i],
                "evaluation_focus": "look at the relevant report section "
                "and its stated reasoning",
                "scoring_hint": "full points only with complete, explicit "
                "treatment; scale down for gaps",
            }
            for i in range(3)
        ]
    return {
        "task_understanding": {
            "core_goal": f"solve subtask {ordinal} of the bicycle problem",
            "expected_output": "a documented model with validated results",
            "key_inputs_constraints": "a year of trip records across "
            "twelve districts",
            "modeling_type": "forecasting" if ordinal == 1 else "optimization",
            "role_in_pipeline": "feeds the rebalancing plan"
            if ordinal == 1
            else "consumes the demand forecast",
        },
        "evaluation_criteria": criteria,
    }


def judge_payload(fractions: dict[str, float]) -> dict:
    out: dict = {}
    for stage_name, fraction in fractions.items():
        entries = []
        for i, points in enumerate(STAGE_POINTS):
            awarded = round(fraction * points, 4)
            level = DEFAULT_BANDS.level_for_fraction(awarded / points)
            entries.append(
                {
                    "dimension": criterion_name(Stage(stage_name), i),
                    "comment": (
                        "meets the bar with clear evidence"
                        if level.value == "FullyMet"
                        else f"falls short of full marks on aspect {i + 1}; "
                        f"the report's treatment is incomplete"
                    ),
                    "score": awarded,
                    "level": level.value,
                }
            )
        out[stage_name] = entries
    return out


def build_fixtures() -> dict:
    sids = subtask_ids()
    fixtures: dict = {}
    fixtures[f"decompose:{PROBLEM_ID}"] = json.dumps(
        {
            "subtasks": [
                {"description": SUBTASK_DESCRIPTIONS[0], "depends_on": []},
                {"description": SUBTASK_DESCRIPTIONS[1], "depends_on": [1]},
            ]
        },
        ensure_ascii=False,
    )
    for ordinal, sid in enumerate(sids, start=1):
        fixtures[f"rubric:{sid}"] = json.dumps(
            rubric_payload(ordinal), ensure_ascii=False
        )
    for (report_id, ordinal, rater), fractions in FRACTIONS.items():
        sid = sids[ordinal - 1]
        fixtures[f"judge:{report_id}:{sid}:{rater}"] = json.dumps(
            judge_payload(fractions), ensure_ascii=False
        )
    for (report_id, rater), dims in BASELINES.items():
        fixtures[f"baseline:{report_id}:{rater}"] = json.dumps(
            {
                "ProblemAnalysis": dims[0],
                "ModelingRigor": dims[1],
                "PracticalityScientificity": dims[2],
                "ResultBias": dims[3],
            }
        )
    for (report_id, ordinal, stage_name), labels in CLASSIFY_LABELS.items():
        sid = sids[ordinal - 1]
        tag = f"classify:{report_id}:{sid}:{stage_name}:judge-a"
        fixtures[tag] = json.dumps({"labels": labels}, ensure_ascii=False)
    return fixtures


def build_manifest() -> dict:
    sids = subtask_ids()
    return {
        "version": 1,
        "problems": [
            {
                "id": PROBLEM_ID,
                "title": "Shared bicycle demand and rebalancing",
                "statement": PROBLEM_STATEMENT,
                "method_tags": ["forecasting", "vehicle-routing"],
                "domain_tags": ["urban-transport"],
            }
        ],
        "reports": [
            {
                "id": "model-a-r1",
                "problem_id": PROBLEM_ID,
                "model_name": "model-a",
                "body": REPORT_BODIES["model-a-r1"],
            },
            {
                "id": "model-b-r1",
                "problem_id": PROBLEM_ID,
                "model_name": "model-b",
                "body": REPORT_BODIES["model-b-r1"],
                "per_subtask_sections": {
                    sids[0]: "Demand section: a single moving average is "
                    "fitted for all districts.",
                    sids[1]: "Rebalancing section: bicycles are moved from "
                    "full to empty districts by judgement.",
                },
            },
        ],
    }


def main() -> None:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "fixtures", "e2e"
    )
    out_dir = os.path.abspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    def write(name: str, payload: dict) -> None:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, ensure_ascii=False, indent=2)
            f.write("\n")
        print(f"wrote {path}")

    write("manifest.json", build_manifest())
    write("mock_fixtures.json", build_fixtures())
    write(
        "e2e.json",
        {
            "run_id": RUN_ID,
            "problem_id": PROBLEM_ID,
            "raters": RATERS,
            "language": "en",
            "threshold": 8.0,
            "clock": "2000-01-01T00:00:00+00:00",
            "seed": 7,
        },
    )


if __name__ == "__main__":
    main()
