"""Criterion-by-criterion judging of reports, and the verdict band table.

The band table is the single source of truth for how an awarded-points
fraction maps to a six-level verdict. Judging sends one model call per
(report, subtask), validates the returned verdicts for coverage, bounds,
band consistency, and evidence comments, allows exactly one repair round,
and fails hard if problems remain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .errors import ConsistencyError, JsonExtractionError, JudgingError
from .gateway import ChatRequest, Gateway, extract_json_block
from .model import (
    BaselineDimension,
    BaselineScore,
    Criterion,
    CriterionScore,
    Problem,
    Report,
    Rubric,
    Stage,
    Subtask,
    VerdictLevel,
    validate_score,
)
from .prompts import get_template

logger = logging.getLogger(__name__)

# One repair round: a bad judge answer gets exactly one corrective re-ask.
JUDGE_REPAIR_LIMIT = 1

ArchiveFn = Callable[[str, dict], None]


@dataclass(frozen=True)
class BandTable:
    """Partition of the awarded fraction range [0, 1] into verdict levels.

    A fraction of exactly 0 is CompletelyNotMet; anything above 0 falls in
    the half-open band whose lower threshold it reaches, except the top
    band which is closed at 1.
    """

    fully_met_min: float = 0.90
    almost_met_min: float = 0.70
    partially_met_min: float = 0.40
    barely_not_met_min: float = 0.20

    def __post_init__(self) -> None:
        cuts = (
            self.barely_not_met_min,
            self.partially_met_min,
            self.almost_met_min,
            self.fully_met_min,
        )
        if not all(0 < a < b for a, b in zip(cuts, cuts[1:])) or not (
            0 < cuts[0] and cuts[-1] <= 1
        ):
            raise ValueError(f"band thresholds not strictly increasing in (0, 1]: {cuts}")

    def level_for_fraction(self, fraction: float) -> VerdictLevel:
        if not 0 <= fraction <= 1:
            raise ValueError(f"fraction {fraction} outside [0, 1]")
        if fraction == 0:
            return VerdictLevel.COMPLETELY_NOT_MET
        if fraction >= self.fully_met_min:
            return VerdictLevel.FULLY_MET
        if fraction >= self.almost_met_min:
            return VerdictLevel.ALMOST_MET
        if fraction >= self.partially_met_min:
            return VerdictLevel.PARTIALLY_MET
        if fraction >= self.barely_not_met_min:
            return VerdictLevel.BARELY_NOT_MET
        return VerdictLevel.NOT_MET

    def interval(self, level: VerdictLevel) -> tuple[float, float, bool, bool]:
        """(low, high, low_inclusive, high_inclusive) for a level's band."""
        table = {
            VerdictLevel.FULLY_MET: (self.fully_met_min, 1.0, True, True),
            VerdictLevel.ALMOST_MET: (self.almost_met_min, self.fully_met_min, True, False),
            VerdictLevel.PARTIALLY_MET: (self.partially_met_min, self.almost_met_min, True, False),
            VerdictLevel.BARELY_NOT_MET: (self.barely_not_met_min, self.partially_met_min, True, False),
            VerdictLevel.NOT_MET: (0.0, self.barely_not_met_min, False, False),
            VerdictLevel.COMPLETELY_NOT_MET: (0.0, 0.0, True, True),
        }
        return table[level]


DEFAULT_BANDS = BandTable()


def level_for_fraction(fraction: float) -> VerdictLevel:
    return DEFAULT_BANDS.level_for_fraction(fraction)


def check_level_consistency(
    level: VerdictLevel, awarded: float, points: int, bands: BandTable = DEFAULT_BANDS
) -> bool:
    """True when the claimed level matches the awarded fraction's band."""
    if points <= 0 or not 0 <= awarded <= points:
        return False
    return bands.level_for_fraction(awarded / points) is level


def render_rubric_text(rubric: Rubric) -> str:
    """Deterministic plain-text view of a rubric for the judge prompt."""
    lines: list[str] = []
    for stage in rubric.scored_stages():
        lines.append(f"## {stage.value}")
        for c in rubric.stage_criteria[stage]:
            lines.append(f"- {c.name} (max {c.points} points)")
            if c.description:
                lines.append(f"  What is checked: {c.description}")
            if c.evaluation_focus:
                lines.append(f"  Evidence to look at: {c.evaluation_focus}")
            if c.scoring_hint:
                lines.append(f"  Partial credit: {c.scoring_hint}")
        lines.append("")
    for stage, reason in sorted(rubric.not_applicable.items()):
        lines.append(f"## {stage.value}: not applicable ({reason})")
    return "\n".join(lines).strip() + "\n"


def _report_content_for(report: Report, subtask: Subtask) -> str:
    sections = report.per_subtask_sections
    if sections and subtask.id in sections:
        return sections[subtask.id]
    return report.body


def _parse_entries(
    payload: dict, rubric: Rubric
) -> tuple[list[CriterionScore], list[str]]:
    """Match judge output entries to rubric criteria; collect problems.

    Returns candidate scores (with placeholder report/rater ids, filled by
    the caller) and a list of human-readable problems for the repair prompt.
    """
    problems: list[str] = []
    matched: list[tuple[Criterion, dict]] = []
    known_names = {s.value for s in Stage}

    scored = {stage.value: list(rubric.stage_criteria[stage]) for stage in rubric.scored_stages()}
    for key, entries in payload.items():
        if key not in known_names:
            problems.append(f"unknown stage key {key!r}")
            continue
        if key not in scored:
            problems.append(f"stage {key} is not scored in this rubric")
            continue
        if not isinstance(entries, list):
            problems.append(f"stage {key}: expected a list of criterion verdicts")
            continue
        remaining = scored[key]
        for entry in entries:
            if not isinstance(entry, dict):
                problems.append(f"stage {key}: non-object entry {entry!r}")
                continue
            dimension = entry.get("dimension")
            hit = next((c for c in remaining if c.name == dimension), None)
            if hit is None:
                problems.append(
                    f"stage {key}: dimension {dimension!r} does not match any "
                    f"unmatched criterion"
                )
                continue
            remaining.remove(hit)
            matched.append((hit, entry))

    for stage_name, leftover in scored.items():
        for c in leftover:
            if not any(m.id == c.id for m, _ in matched):
                problems.append(f"stage {stage_name}: criterion {c.name!r} missing")

    scores: list[CriterionScore] = []
    for criterion, entry in matched:
        raw_score = entry.get("score")
        if isinstance(raw_score, bool) or not isinstance(raw_score, (int, float)):
            problems.append(
                f"criterion {criterion.name!r}: score {raw_score!r} is not a number"
            )
            continue
        raw_level = entry.get("level")
        try:
            level = VerdictLevel.from_name(str(raw_level))
        except ValueError:
            problems.append(
                f"criterion {criterion.name!r}: unknown level {raw_level!r}"
            )
            continue
        comment = entry.get("comment")
        scores.append(
            CriterionScore(
                criterion_id=criterion.id,
                report_id="",
                rater_id="",
                level=level,
                awarded=float(raw_score),
                comment=str(comment) if comment is not None else "",
            )
        )
    return scores, problems


def _repair_user(original_user: str, problems: Sequence[str]) -> str:
    listed = "\n".join(f"- {p}" for p in problems)
    return (
        f"{original_user}\n\n"
        f"Your previous answer was rejected for these problems:\n{listed}\n"
        f"Return corrected JSON of the same shape, fixing every problem and "
        f"changing nothing else."
    )


def judge_subtask(
    gateway: Gateway,
    report: Report,
    subtask: Subtask,
    rubric: Rubric,
    rater_id: str,
    language: str = "en",
    seed: Optional[int] = None,
    bands: BandTable = DEFAULT_BANDS,
    archive: Optional[ArchiveFn] = None,
) -> list[CriterionScore]:
    """Judge one report against one subtask's rubric, with one repair round.

    Returns one score per rubric criterion, ordered by stage then rubric
    order, then criterion id. Raises ConsistencyError when a level/score
    contradiction survives repair, JudgingError for any other persistent
    problem.
    """
    template = get_template("judge", language)
    system, user = template.render(
        subproblem=subtask.description,
        report_content=_report_content_for(report, subtask),
        report_criteria=render_rubric_text(rubric),
    )
    tag = f"judge:{report.id}:{subtask.id}:{rater_id}"
    criteria_by_id = {c.id: c for c in rubric.criteria()}

    attempt_user = user
    last_text = ""
    for attempt in range(JUDGE_REPAIR_LIMIT + 1):
        request = ChatRequest(
            system=system,
            user=attempt_user,
            seed=seed,
            response_format_hint="json_object",
            tag=tag,
        )
        response = gateway.complete(request)
        last_text = response.text
        if archive is not None:
            archive(
                tag,
                {
                    "kind": "judge",
                    "attempt": attempt,
                    "system": system,
                    "user": attempt_user,
                    "response": response.text,
                    "cached": response.cached,
                },
            )

        problems: list[str] = []
        scores: list[CriterionScore] = []
        band_problem = False
        try:
            payload = extract_json_block(response.text)
        except JsonExtractionError as exc:
            problems.append(f"answer is not a JSON object: {exc}")
        else:
            candidates, problems = _parse_entries(payload, rubric)
            for cand in candidates:
                score = CriterionScore(
                    criterion_id=cand.criterion_id,
                    report_id=report.id,
                    rater_id=rater_id,
                    level=cand.level,
                    awarded=cand.awarded,
                    comment=cand.comment,
                )
                violations = validate_score(
                    score, criteria_by_id[score.criterion_id], bands
                )
                if violations:
                    problems.extend(str(v) for v in violations)
                    band_problem = band_problem or any(
                        v.rule == "band_mismatch" for v in violations
                    )
                else:
                    scores.append(score)

        if not problems:
            ordinal = {c.id: i for i, c in enumerate(rubric.criteria())}
            scores.sort(key=lambda s: (ordinal[s.criterion_id], s.criterion_id))
            return scores

        if attempt < JUDGE_REPAIR_LIMIT:
            logger.info("judge %s: repairing %d problems", tag, len(problems))
            attempt_user = _repair_user(user, problems)
            continue

        message = (
            f"judge output for {tag} still invalid after repair: "
            + "; ".join(problems)
        )
        if band_problem:
            raise ConsistencyError(message, raw_text=last_text)
        raise JudgingError(message, raw_text=last_text)

    raise AssertionError("unreachable")


def judge_report(
    gateway: Gateway,
    report: Report,
    subtasks: Sequence[Subtask],
    rubrics: Mapping[str, Rubric],
    rater_id: str,
    language: str = "en",
    seed: Optional[int] = None,
    bands: BandTable = DEFAULT_BANDS,
    archive: Optional[ArchiveFn] = None,
) -> list[CriterionScore]:
    """Judge a report against every subtask rubric, one call per subtask."""
    ordered = sorted(subtasks, key=lambda s: s.ordinal)
    missing = [s.id for s in ordered if s.id not in rubrics]
    if missing:
        raise JudgingError(f"no rubric for subtasks: {missing}")
    scores: list[CriterionScore] = []
    for subtask in ordered:
        scores.extend(
            judge_subtask(
                gateway,
                report,
                subtask,
                rubrics[subtask.id],
                rater_id,
                language=language,
                seed=seed,
                bands=bands,
                archive=archive,
            )
        )
    return scores


def judge_baseline(
    gateway: Gateway,
    report: Report,
    problem: Problem,
    rater_id: str,
    language: str = "en",
    seed: Optional[int] = None,
    archive: Optional[ArchiveFn] = None,
) -> BaselineScore:
    """Whole-report scoring on the four coarse dimensions, one repair round."""
    template = get_template("baseline", language)
    system, user = template.render(
        question=problem.statement, report_content=report.body
    )
    tag = f"baseline:{report.id}:{rater_id}"

    attempt_user = user
    last_text = ""
    for attempt in range(JUDGE_REPAIR_LIMIT + 1):
        request = ChatRequest(
            system=system,
            user=attempt_user,
            seed=seed,
            response_format_hint="json_object",
            tag=tag,
        )
        response = gateway.complete(request)
        last_text = response.text
        if archive is not None:
            archive(
                tag,
                {
                    "kind": "baseline",
                    "attempt": attempt,
                    "system": system,
                    "user": attempt_user,
                    "response": response.text,
                    "cached": response.cached,
                },
            )

        problems: list[str] = []
        dims: dict[BaselineDimension, float] = {}
        try:
            payload = extract_json_block(response.text)
        except JsonExtractionError as exc:
            problems.append(f"answer is not a JSON object: {exc}")
            payload = {}
        for dim in BaselineDimension:
            raw = payload.get(dim.value)
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                problems.append(f"{dim.value}: value {raw!r} is not a number")
            elif not 0 <= raw <= 10:
                problems.append(f"{dim.value}: value {raw} outside [0, 10]")
            else:
                dims[dim] = float(raw)
        for key in payload:
            if key not in {d.value for d in BaselineDimension}:
                problems.append(f"unknown dimension {key!r}")

        if not problems:
            average = sum(dims.values()) / len(dims)
            return BaselineScore(
                report_id=report.id, rater_id=rater_id, dims=dims, average=average
            )

        if attempt < JUDGE_REPAIR_LIMIT:
            attempt_user = _repair_user(user, problems)
            continue
        raise JudgingError(
            f"baseline output for {tag} still invalid after repair: "
            + "; ".join(problems),
            raw_text=last_text,
        )

    raise AssertionError("unreachable")
