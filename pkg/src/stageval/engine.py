"""Run orchestration: the pipeline steps shared by the CLI and the service.

A run moves through decomposing, awaiting_subtask_review,
generating_rubrics, awaiting_rubric_review, judging, and complete. With
review mode off, the awaiting states are passed through by auto-approving
everything, which keeps the state machine identical for batch and
interactive use.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional, Sequence

from . import aggregate, failures as failures_mod, forge, judging, reliability
from .errors import CompletenessError, DegenerateInputError, LoadError, StateError
from .gateway import Gateway
from .ingest import Dataset
from .model import (
    BaselineScore,
    Criterion,
    CriterionScore,
    ReviewStatus,
    Rubric,
    ScoreProfile,
    Stage,
    Subtask,
    VerdictLevel,
    index_criteria,
    validate_rubric,
    validate_score,
)
from .store import RunState, RunStore

logger = logging.getLogger(__name__)


@dataclass
class Engine:
    """Binds a store and a model gateway into runnable pipeline steps."""

    store: RunStore
    gateway: Gateway
    seed: Optional[int] = None

    # helpers

    def _dataset(self) -> Dataset:
        return self.store.load_dataset()

    def _approved_subtasks(self, run_id: str) -> list[Subtask]:
        return [
            s
            for s in self.store.load_subtasks(run_id)
            if s.status is ReviewStatus.APPROVED
        ]

    def _criteria_index(self, run_id: str) -> dict[str, Criterion]:
        return index_criteria(self.store.list_rubrics(run_id).values())

    def _model_of(self, dataset: Dataset, report_id: str) -> str:
        return dataset.report(report_id).model_name

    # lifecycle

    def create_run(
        self,
        run_id: str,
        problem_id: str,
        language: str = "en",
        review_mode: bool = True,
    ) -> RunState:
        dataset = self._dataset()
        dataset.problem(problem_id)
        if not dataset.reports_for(problem_id):
            raise LoadError(f"problem {problem_id} has no reports to evaluate")
        return self.store.create_run(
            run_id, problem_id, language=language, review_mode=review_mode
        )

    def run_decompose(self, run_id: str, guidance: str = "") -> tuple[list[Subtask], bool]:
        """Generate (or regenerate) the subtask list for a run."""
        run = self.store.load_run(run_id)
        if run.state != "decomposing":
            raise StateError(
                f"run {run_id}: decompose requires state decomposing, "
                f"found {run.state}"
            )
        dataset = self._dataset()
        problem = dataset.problem(run.problem_id)
        previous = self.store.load_subtasks(run_id)
        subtasks, unchanged = forge.decompose(
            self.gateway,
            problem,
            language=run.language,
            seed=self.seed,
            guidance=guidance,
            previous=previous,
            archive=self.store.archiver(run_id),
        )
        self.store.save_subtasks(run_id, subtasks)
        self.store.set_state(run_id, "awaiting_subtask_review")
        if not run.review_mode:
            for s in subtasks:
                self.store.apply_decision(
                    run_id, "subtask", s.id, "approve", editor="auto"
                )
        return subtasks, unchanged

    def regenerate_subtasks(self, run_id: str, guidance: str) -> tuple[list[Subtask], bool]:
        """Reviewer sends the decomposition back with guidance."""
        if not guidance.strip():
            raise ValueError("regeneration requires non-empty guidance")
        self.store.set_state(run_id, "decomposing")
        self.store.journal_append(
            run_id, "regenerate", {"target": "subtasks", "guidance": guidance}
        )
        return self.run_decompose(run_id, guidance=guidance)

    def decide_subtask(
        self,
        run_id: str,
        subtask_id: str,
        action: str,
        edits: Optional[Mapping[str, Any]] = None,
        editor: str = "",
        idempotency_key: Optional[str] = None,
    ) -> Subtask:
        run = self.store.load_run(run_id)
        if run.state != "awaiting_subtask_review":
            raise StateError(
                f"run {run_id}: subtask decisions require state "
                f"awaiting_subtask_review, found {run.state}"
            )
        entity, _, _ = self.store.apply_decision(
            run_id,
            "subtask",
            subtask_id,
            action,
            edits=edits,
            editor=editor,
            idempotency_key=idempotency_key,
        )
        return entity

    def subtask_review_complete(self, run_id: str) -> bool:
        """True when every subtask is resolved and at least one is approved."""
        subtasks = self.store.load_subtasks(run_id)
        if not subtasks:
            return False
        resolved = all(
            s.status in (ReviewStatus.APPROVED, ReviewStatus.REJECTED)
            for s in subtasks
        )
        return resolved and any(
            s.status is ReviewStatus.APPROVED for s in subtasks
        )

    def run_rubrics(self, run_id: str) -> dict[str, Rubric]:
        """Generate rubrics for every approved subtask."""
        run = self.store.load_run(run_id)
        if run.state not in ("awaiting_subtask_review", "awaiting_rubric_review"):
            raise StateError(
                f"run {run_id}: rubric generation cannot start from {run.state}"
            )
        if not self.subtask_review_complete(run_id):
            raise StateError(
                f"run {run_id}: rubric generation requires every subtask "
                f"resolved and at least one approved"
            )
        self.store.set_state(run_id, "generating_rubrics")
        dataset = self._dataset()
        problem = dataset.problem(run.problem_id)
        approved = self._approved_subtasks(run_id)
        existing = self.store.list_rubrics(run_id)
        try:
            for subtask in sorted(approved, key=lambda s: s.ordinal):
                current = existing.get(subtask.id)
                if current is not None and not self._needs_regeneration(current):
                    continue
                rubric = forge.generate_rubric(
                    self.gateway,
                    problem,
                    subtask,
                    previous_subtasks=approved,
                    language=run.language,
                    seed=self.seed,
                    archive=self.store.archiver(run_id),
                )
                self.store.save_rubric(run_id, rubric)
        except Exception as exc:
            self.store.set_state(run_id, "failed", error=str(exc))
            raise
        self.store.set_state(run_id, "awaiting_rubric_review")
        if not run.review_mode:
            for rubric in self.store.list_rubrics(run_id).values():
                for c in rubric.criteria():
                    if c.status is ReviewStatus.GENERATED:
                        self.store.apply_decision(
                            run_id, "criterion", c.id, "approve", editor="auto"
                        )
        return self.store.list_rubrics(run_id)

    @staticmethod
    def _needs_regeneration(rubric: Rubric) -> bool:
        return any(
            c.status is ReviewStatus.REJECTED for c in rubric.criteria()
        )

    def decide_criterion(
        self,
        run_id: str,
        criterion_id: str,
        action: str,
        edits: Optional[Mapping[str, Any]] = None,
        editor: str = "",
        idempotency_key: Optional[str] = None,
    ) -> Criterion:
        run = self.store.load_run(run_id)
        if run.state != "awaiting_rubric_review":
            raise StateError(
                f"run {run_id}: criterion decisions require state "
                f"awaiting_rubric_review, found {run.state}"
            )
        entity, _, _ = self.store.apply_decision(
            run_id,
            "criterion",
            criterion_id,
            action,
            edits=edits,
            editor=editor,
            idempotency_key=idempotency_key,
        )
        return entity

    def _check_judgeable(self, run_id: str) -> dict[str, Rubric]:
        """Every approved subtask has an all-approved, rule-clean rubric."""
        approved = self._approved_subtasks(run_id)
        rubrics = self.store.list_rubrics(run_id)
        usable: dict[str, Rubric] = {}
        for subtask in approved:
            rubric = rubrics.get(subtask.id)
            if rubric is None:
                raise StateError(f"subtask {subtask.id} has no rubric")
            pending = [
                c.id
                for c in rubric.criteria()
                if c.status is not ReviewStatus.APPROVED
            ]
            if pending:
                raise StateError(
                    f"subtask {subtask.id}: {len(pending)} criteria not approved"
                )
            violations = validate_rubric(rubric)
            if violations:
                raise StateError(
                    f"subtask {subtask.id}: rubric violates rules after review: "
                    + "; ".join(str(v) for v in violations)
                )
            usable[subtask.id] = rubric
        if not usable:
            raise StateError(f"run {run_id}: nothing to judge")
        return usable

    def run_judge(self, run_id: str, rater_ids: Sequence[str]) -> list[ScoreProfile]:
        """Judge every report of the run's problem with each rater id."""
        if not rater_ids:
            raise ValueError("need at least one rater id")
        run = self.store.load_run(run_id)
        if run.state not in ("awaiting_rubric_review", "complete", "judging"):
            raise StateError(f"run {run_id}: cannot judge from state {run.state}")
        rubrics = self._check_judgeable(run_id)
        if run.state != "judging":
            self.store.set_state(run_id, "judging")
        dataset = self._dataset()
        reports = dataset.reports_for(run.problem_id)
        subtasks = [
            s for s in self._approved_subtasks(run_id) if s.id in rubrics
        ]
        profiles: list[ScoreProfile] = []
        try:
            for report in sorted(reports, key=lambda r: r.id):
                for rater_id in rater_ids:
                    scores = judging.judge_report(
                        self.gateway,
                        report,
                        subtasks,
                        rubrics,
                        rater_id,
                        language=run.language,
                        seed=self.seed,
                        archive=self.store.archiver(run_id),
                    )
                    self.store.save_scores(run_id, report.id, rater_id, scores)
                    profile = aggregate.build_profile(
                        report.id, rater_id, scores, rubrics
                    )
                    self.store.save_profile(run_id, profile)
                    profiles.append(profile)
        except Exception as exc:
            self.store.set_state(run_id, "failed", error=str(exc))
            raise
        self.store.set_state(run_id, "complete")
        return profiles

    def run_baseline(self, run_id: str, rater_ids: Sequence[str]) -> list[BaselineScore]:
        """Whole-report baseline scoring; independent of the stage pipeline."""
        if not rater_ids:
            raise ValueError("need at least one rater id")
        run = self.store.load_run(run_id)
        dataset = self._dataset()
        problem = dataset.problem(run.problem_id)
        out: list[BaselineScore] = []
        for report in sorted(dataset.reports_for(run.problem_id), key=lambda r: r.id):
            for rater_id in rater_ids:
                score = judging.judge_baseline(
                    self.gateway,
                    report,
                    problem,
                    rater_id,
                    language=run.language,
                    seed=self.seed,
                    archive=self.store.archiver(run_id),
                )
                self.store.save_baseline(run_id, score)
                out.append(score)
        return out

    # derived results

    def profiles_by_model(self, run_id: str) -> dict[str, list[ScoreProfile]]:
        dataset = self._dataset()
        grouped: dict[str, list[ScoreProfile]] = {}
        for profile in self.store.load_profiles(run_id):
            model = self._model_of(dataset, profile.report_id)
            grouped.setdefault(model, []).append(profile)
        return grouped

    def run_aggregate(self, run_id: str) -> dict[str, dict[Stage, float]]:
        """Write stage_means.csv and distributions.csv from stored profiles."""
        grouped = self.profiles_by_model(run_id)
        if not grouped:
            raise DegenerateInputError(f"run {run_id} has no profiles yet")
        means = aggregate.model_stage_means(grouped)
        self.store.write_stage_means_csv(run_id, means)

        rows: list[dict] = []
        for model in sorted(grouped):
            profiles = grouped[model]
            report_scores = [p.report_score for p in profiles]
            rows.append(
                {"scope": f"report:{model}", **reliability.score_distribution(report_scores).to_dict()}
            )
            by_stage: dict[Stage, list[float]] = {}
            for p in profiles:
                for (_, stage), value in p.stage_scores.items():
                    by_stage.setdefault(stage, []).append(value)
            for stage in sorted(by_stage):
                rows.append(
                    {
                        "scope": f"stage:{model}:{stage.value}",
                        **reliability.score_distribution(by_stage[stage]).to_dict(),
                    }
                )
        self.store.write_distributions_csv(run_id, rows)
        return means

    def run_icc(
        self,
        run_id: str,
        scheme: str = "ours",
        level: str = "report",
        stage: Optional[Stage] = None,
        expert_collapse: str = "rater_id",
    ) -> dict:
        """Compute agreement for the chosen scheme and level; persist it."""
        if scheme not in ("ours", "baseline"):
            raise ValueError(f"unknown scheme {scheme!r}")
        if level not in ("report", "criterion"):
            raise ValueError(f"unknown level {level!r}")
        if expert_collapse not in ("rater_id", "mean"):
            raise ValueError(f"unknown expert collapse {expert_collapse!r}")
        if stage is not None and level != "criterion":
            raise ValueError("a stage restriction requires criterion level")

        if scheme == "baseline":
            if level != "report":
                raise ValueError("baseline agreement exists only at report level")
            result = self._baseline_icc(run_id)
        elif level == "report":
            profiles = self._collapse(self.store.load_profiles(run_id), expert_collapse)
            result = reliability.icc_2_1(reliability.build_report_matrix(profiles))
        else:
            profiles = self._collapse(self.store.load_profiles(run_id), expert_collapse)
            criteria = self._criteria_index(run_id)
            result = reliability.icc_2_1(
                reliability.build_criterion_matrix(profiles, criteria, stage=stage)
            )

        payload: dict = {"scheme": scheme, "level": level, **result.to_dict()}
        if stage is not None:
            payload["stage"] = stage.value
        self.store.write_icc_report(run_id, payload)
        return payload

    def _baseline_icc(self, run_id: str):
        baselines = self.store.load_baselines(run_id)
        if not baselines:
            raise DegenerateInputError(f"run {run_id} has no baseline scores")
        cells = {}
        for b in baselines:
            key = (b.report_id, b.rater_id)
            if key in cells:
                raise CompletenessError(f"duplicate baseline score for {key}")
            cells[key] = b.average
        item_ids = tuple(sorted({r for r, _ in cells}))
        rater_ids = tuple(sorted({j for _, j in cells}))
        matrix = reliability._grid_from_cells(cells, item_ids, rater_ids)
        return reliability.icc_2_1(matrix)

    @staticmethod
    def _collapse(
        profiles: Sequence[ScoreProfile], expert_collapse: str
    ) -> list[ScoreProfile]:
        """Optionally average expert raters into one synthetic rater.

        Expert raters are those whose id starts with "expert". With
        collapse "mean", their criterion scores are averaged per criterion
        into rater id "expert"; automatic raters pass through unchanged.
        """
        if expert_collapse != "mean":
            return list(profiles)
        experts = [p for p in profiles if p.rater_id.startswith("expert")]
        others = [p for p in profiles if not p.rater_id.startswith("expert")]
        if not experts:
            return list(profiles)
        by_report: dict[str, list[ScoreProfile]] = {}
        for p in experts:
            by_report.setdefault(p.report_id, []).append(p)
        collapsed: list[ScoreProfile] = []
        for report_id in sorted(by_report):
            group = by_report[report_id]
            first = group[0]
            n = len(group)
            stage_scores = {
                key: sum(p.stage_scores[key] for p in group) / n
                for key in first.stage_scores
            }
            subtask_scores = {
                key: sum(p.subtask_scores[key] for p in group) / n
                for key in first.subtask_scores
            }
            by_criterion: dict[str, list[CriterionScore]] = {}
            for p in group:
                for s in p.criterion_scores:
                    by_criterion.setdefault(s.criterion_id, []).append(s)
            merged_scores = tuple(
                CriterionScore(
                    criterion_id=cid,
                    report_id=report_id,
                    rater_id="expert",
                    level=sorted(ss, key=lambda s: s.level.order)[len(ss) // 2].level,
                    awarded=sum(s.awarded for s in ss) / len(ss),
                    comment="; ".join(
                        sorted({s.comment for s in ss if s.comment.strip()})
                    ),
                )
                for cid, ss in sorted(by_criterion.items())
            )
            collapsed.append(
                ScoreProfile(
                    report_id=report_id,
                    rater_id="expert",
                    criterion_scores=merged_scores,
                    stage_scores=stage_scores,
                    subtask_scores=subtask_scores,
                    report_score=sum(p.report_score for p in group) / n,
                )
            )
        return others + collapsed

    def run_failures(
        self,
        run_id: str,
        threshold: float = failures_mod.DEFAULT_THRESHOLD,
        rater_id: Optional[str] = None,
    ) -> dict:
        """Mine failure causes from one rater's profiles; persist tables."""
        all_profiles = self.store.load_profiles(run_id)
        if not all_profiles:
            raise DegenerateInputError(f"run {run_id} has no profiles yet")
        raters = sorted({p.rater_id for p in all_profiles})
        chosen = rater_id or raters[0]
        if chosen not in raters:
            raise LookupError(f"no profiles for rater {chosen}")
        profiles = [p for p in all_profiles if p.rater_id == chosen]

        dataset = self._dataset()
        grouped: dict[str, list[ScoreProfile]] = {}
        for p in profiles:
            grouped.setdefault(self._model_of(dataset, p.report_id), []).append(p)

        cells = failures_mod.select_low_scoring(grouped, threshold=threshold)
        profile_index = {(p.report_id, p.rater_id): p for p in profiles}
        criteria = self._criteria_index(run_id)
        assignments = failures_mod.classify_failures(
            self.gateway,
            cells,
            profile_index,
            criteria,
            language=self.store.load_run(run_id).language,
            seed=self.seed,
            archive=self.store.archiver(run_id),
        )
        tables = {
            stage: failures_mod.prevalence_table(assignments, stage)
            for stage in failures_mod.FAILURE_TAXONOMY
            if any(a.cell.stage is stage for a in assignments)
        }
        self.store.write_failures(run_id, tables, assignments)
        return {
            "rater_id": chosen,
            "threshold": threshold,
            "low_cells": len(cells),
            "labeled_cells": len(assignments),
            "stages": sorted(s.value for s in tables),
            "tables": {
                stage.value: [row.to_dict() for row in rows]
                for stage, rows in sorted(tables.items(), key=lambda kv: kv[0].order)
            },
        }

    # expert score import

    def import_expert_scores(self, run_id: str, csv_text: str) -> dict:
        """Validate and merge expert criterion scores from CSV text.

        Expected columns: report_id, criterion_id, rater_id, level,
        awarded, comment. Every row is validated against the criterion and
        band rules; bad rows are rejected individually with reasons while
        good rows land in the store.
        """
        self.store.load_run(run_id)
        dataset = self._dataset()
        criteria = self._criteria_index(run_id)
        if not criteria:
            raise StateError(f"run {run_id} has no rubrics to score against")

        reader = csv.DictReader(io.StringIO(csv_text))
        needed = {"report_id", "criterion_id", "rater_id", "level", "awarded", "comment"}
        have = set(reader.fieldnames or [])
        if not needed <= have:
            raise LoadError(
                f"expert CSV needs columns {sorted(needed)}; got {sorted(have)}"
            )

        accepted: list[CriterionScore] = []
        rejected: list[dict] = []
        for line, row in enumerate(reader, start=2):
            reason = self._validate_expert_row(row, dataset, criteria)
            if reason is not None:
                rejected.append({"line": line, "reason": reason})
                continue
            accepted.append(
                CriterionScore(
                    criterion_id=row["criterion_id"],
                    report_id=row["report_id"],
                    rater_id=row["rater_id"],
                    level=VerdictLevel.from_name(row["level"]),
                    awarded=float(row["awarded"]),
                    comment=row.get("comment", "") or "",
                )
            )

        groups: dict[tuple[str, str], list[CriterionScore]] = {}
        for s in accepted:
            groups.setdefault((s.report_id, s.rater_id), []).append(s)

        seq = None
        if groups:
            seq = self.store.journal_append(
                run_id,
                "import",
                {
                    "groups": [
                        {
                            "report_id": report_id,
                            "rater_id": rater_id,
                            "scores": [s.to_dict() for s in scores],
                        }
                        for (report_id, rater_id), scores in sorted(groups.items())
                    ]
                },
            )
        profiles_built: list[dict] = []
        rubrics = self.store.list_rubrics(run_id)
        for (report_id, rater_id), scores in sorted(groups.items()):
            merged = self.store.merge_scores(run_id, report_id, rater_id, scores)
            try:
                profile = aggregate.build_profile(report_id, rater_id, merged, rubrics)
            except CompletenessError:
                continue
            self.store.save_profile(run_id, profile)
            profiles_built.append({"report_id": report_id, "rater_id": rater_id})

        if seq is not None:
            run = self.store.load_run(run_id)
            self.store.save_run(replace(run, journal_seq=seq))
        return {
            "accepted": len(accepted),
            "rejected": rejected,
            "profiles_built": profiles_built,
        }

    def _validate_expert_row(
        self,
        row: Mapping[str, str],
        dataset: Dataset,
        criteria: Mapping[str, Criterion],
    ) -> Optional[str]:
        criterion = criteria.get(row.get("criterion_id", ""))
        if criterion is None:
            return f"unknown criterion_id {row.get('criterion_id')!r}"
        try:
            dataset.report(row.get("report_id", ""))
        except LoadError:
            return f"unknown report_id {row.get('report_id')!r}"
        rater = row.get("rater_id", "")
        if not rater:
            return "empty rater_id"
        try:
            level = VerdictLevel.from_name(row.get("level", ""))
        except ValueError:
            return f"unknown level {row.get('level')!r}"
        try:
            awarded = float(row.get("awarded", ""))
        except (TypeError, ValueError):
            return f"awarded {row.get('awarded')!r} is not a number"
        score = CriterionScore(
            criterion_id=criterion.id,
            report_id=row["report_id"],
            rater_id=rater,
            level=level,
            awarded=awarded,
            comment=row.get("comment", "") or "",
        )
        violations = validate_score(score, criterion)
        if violations:
            return "; ".join(str(v) for v in violations)
        return None
