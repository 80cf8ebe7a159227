"""Domain types shared across the evaluation pipeline.

Everything here is immutable after construction and JSON-serializable via
``to_dict`` / ``from_dict``. Construction validates shape; value-level rules
on rubrics and scores are reported by :func:`validate_rubric` and
:func:`validate_score` as violation values rather than exceptions, so that
malformed model output can be represented, inspected, and repaired.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from functools import total_ordering
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import CrossReferenceError


def content_id(*parts: object) -> str:
    """Deterministic opaque id from the identifying parts of a record.

    Same parts always hash to the same id, so reruns reproduce ids.
    """
    joined = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


@total_ordering
class Stage(Enum):
    """The seven canonical modeling workflow stages, in pipeline order."""

    PROBLEM_IDENTIFICATION = "ProblemIdentification"
    PROBLEM_FORMULATION = "ProblemFormulation"
    ASSUMPTION_DEVELOPMENT = "AssumptionDevelopment"
    MODEL_CONSTRUCTION = "ModelConstruction"
    MODEL_SOLVING = "ModelSolving"
    CODE_IMPLEMENTATION = "CodeImplementation"
    RESULT_ANALYSIS = "ResultAnalysis"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Stage):
            return NotImplemented
        return self.order < other.order

    @classmethod
    def from_name(cls, name: str) -> "Stage":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown stage name {name!r}") from None


_STAGE_ORDER = {stage: i for i, stage in enumerate(Stage)}


@total_ordering
class VerdictLevel(Enum):
    """Six-level judge verdict, ordered best (FullyMet) to worst."""

    FULLY_MET = "FullyMet"
    ALMOST_MET = "AlmostMet"
    PARTIALLY_MET = "PartiallyMet"
    BARELY_NOT_MET = "BarelyNotMet"
    NOT_MET = "NotMet"
    COMPLETELY_NOT_MET = "CompletelyNotMet"

    @property
    def order(self) -> int:
        return _LEVEL_ORDER[self]

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, VerdictLevel):
            return NotImplemented
        return self.order < other.order

    @classmethod
    def from_name(cls, name: str) -> "VerdictLevel":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown verdict level {name!r}") from None


_LEVEL_ORDER = {level: i for i, level in enumerate(VerdictLevel)}


class ReviewStatus(Enum):
    """Lifecycle status of a generated subtask or criterion."""

    GENERATED = "generated"
    APPROVED = "approved"
    EDITED = "edited"
    REJECTED = "rejected"


# Legal status transitions; every transition increments the revision counter.
STATUS_TRANSITIONS: dict[ReviewStatus, frozenset[ReviewStatus]] = {
    ReviewStatus.GENERATED: frozenset(
        {ReviewStatus.APPROVED, ReviewStatus.EDITED, ReviewStatus.REJECTED}
    ),
    ReviewStatus.EDITED: frozenset({ReviewStatus.APPROVED, ReviewStatus.REJECTED}),
    ReviewStatus.APPROVED: frozenset(),
    ReviewStatus.REJECTED: frozenset(),
}


class BaselineDimension(Enum):
    """The four coarse dimensions of the comparison (baseline) rubric."""

    PROBLEM_ANALYSIS = "ProblemAnalysis"
    MODELING_RIGOR = "ModelingRigor"
    PRACTICALITY_SCIENTIFICITY = "PracticalityScientificity"
    RESULT_BIAS = "ResultBias"


@dataclass(frozen=True)
class Attachment:
    """A named data file shipped with a problem statement."""

    name: str
    path: str

    def to_dict(self) -> dict:
        return {"name": self.name, "path": self.path}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Attachment":
        return cls(name=d["name"], path=d["path"])


@dataclass(frozen=True)
class Problem:
    """A modeling task: statement text plus multi-label metadata tags."""

    id: str
    title: str
    statement: str
    attachments: tuple[Attachment, ...] = ()
    method_tags: frozenset[str] = frozenset()
    domain_tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not self.statement:
            raise ValueError(f"problem {self.id}: statement must be non-empty")
        object.__setattr__(self, "attachments", tuple(self.attachments))
        object.__setattr__(self, "method_tags", frozenset(self.method_tags))
        object.__setattr__(self, "domain_tags", frozenset(self.domain_tags))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "statement": self.statement,
            "attachments": [a.to_dict() for a in self.attachments],
            "method_tags": sorted(self.method_tags),
            "domain_tags": sorted(self.domain_tags),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Problem":
        return cls(
            id=d["id"],
            title=d["title"],
            statement=d["statement"],
            attachments=tuple(Attachment.from_dict(a) for a in d.get("attachments", [])),
            method_tags=frozenset(d.get("method_tags", [])),
            domain_tags=frozenset(d.get("domain_tags", [])),
        )


@dataclass(frozen=True)
class Subtask:
    """One self-contained modeling requirement extracted from a problem."""

    id: str
    problem_id: str
    ordinal: int
    description: str
    depends_on: tuple[str, ...] = ()
    status: ReviewStatus = ReviewStatus.GENERATED
    revision: int = 0

    def __post_init__(self) -> None:
        if self.ordinal < 1:
            raise ValueError(f"subtask {self.id}: ordinal must be >= 1")
        if self.revision < 0:
            raise ValueError(f"subtask {self.id}: revision must be >= 0")
        if not self.description:
            raise ValueError(f"subtask {self.id}: description must be non-empty")
        object.__setattr__(self, "depends_on", tuple(self.depends_on))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "problem_id": self.problem_id,
            "ordinal": self.ordinal,
            "description": self.description,
            "depends_on": list(self.depends_on),
            "status": self.status.value,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Subtask":
        return cls(
            id=d["id"],
            problem_id=d["problem_id"],
            ordinal=d["ordinal"],
            description=d["description"],
            depends_on=tuple(d.get("depends_on", [])),
            status=ReviewStatus(d.get("status", "generated")),
            revision=d.get("revision", 0),
        )


@dataclass(frozen=True)
class TaskUnderstanding:
    """Semantic abstraction of a subtask that grounds its criteria."""

    core_goal: str
    expected_output: str
    key_inputs_constraints: str
    modeling_type: str
    role_in_pipeline: str

    FIELDS = (
        "core_goal",
        "expected_output",
        "key_inputs_constraints",
        "modeling_type",
        "role_in_pipeline",
    )

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskUnderstanding":
        return cls(**{name: d.get(name, "") for name in cls.FIELDS})


@dataclass(frozen=True)
class Criterion:
    """An atomic, point-budgeted scoring item for one (subtask, stage) pair.

    Value rules (points in [1, 100], non-empty name and scoring hint) are
    reported by :func:`validate_rubric`, not enforced here, so that raw model
    output can be represented before repair.
    """

    id: str
    subtask_id: str
    stage: Stage
    name: str
    description: str
    points: int
    evaluation_focus: str = ""
    scoring_hint: str = ""
    status: ReviewStatus = ReviewStatus.GENERATED
    revision: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subtask_id": self.subtask_id,
            "stage": self.stage.value,
            "name": self.name,
            "description": self.description,
            "points": self.points,
            "evaluation_focus": self.evaluation_focus,
            "scoring_hint": self.scoring_hint,
            "status": self.status.value,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Criterion":
        return cls(
            id=d["id"],
            subtask_id=d["subtask_id"],
            stage=Stage.from_name(d["stage"]),
            name=d["name"],
            description=d.get("description", ""),
            points=d["points"],
            evaluation_focus=d.get("evaluation_focus", ""),
            scoring_hint=d.get("scoring_hint", ""),
            status=ReviewStatus(d.get("status", "generated")),
            revision=d.get("revision", 0),
        )


@dataclass(frozen=True)
class Rubric:
    """The complete criteria set for one subtask.

    Each of the seven stages appears either in ``stage_criteria`` (scored,
    3-5 criteria summing to 100 points) or in ``not_applicable`` with a
    reason, never both. :func:`validate_rubric` checks those rules.
    """

    subtask_id: str
    understanding: TaskUnderstanding
    stage_criteria: dict[Stage, tuple[Criterion, ...]] = field(default_factory=dict)
    not_applicable: dict[Stage, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        normalized = {s: tuple(crits) for s, crits in self.stage_criteria.items()}
        object.__setattr__(self, "stage_criteria", normalized)

    def criteria(self) -> list[Criterion]:
        """All criteria in canonical (stage order, list order) sequence."""
        out: list[Criterion] = []
        for stage in sorted(self.stage_criteria):
            out.extend(self.stage_criteria[stage])
        return out

    def scored_stages(self) -> list[Stage]:
        return sorted(self.stage_criteria)

    def to_dict(self) -> dict:
        return {
            "subtask_id": self.subtask_id,
            "understanding": self.understanding.to_dict(),
            "stage_criteria": {
                stage.value: [c.to_dict() for c in crits]
                for stage, crits in sorted(self.stage_criteria.items())
            },
            "not_applicable": {
                stage.value: reason
                for stage, reason in sorted(self.not_applicable.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Rubric":
        return cls(
            subtask_id=d["subtask_id"],
            understanding=TaskUnderstanding.from_dict(d["understanding"]),
            stage_criteria={
                Stage.from_name(name): tuple(Criterion.from_dict(c) for c in crits)
                for name, crits in d.get("stage_criteria", {}).items()
            },
            not_applicable={
                Stage.from_name(name): reason
                for name, reason in d.get("not_applicable", {}).items()
            },
        )


@dataclass(frozen=True)
class Report:
    """A machine-generated modeling report to be judged."""

    id: str
    problem_id: str
    model_name: str
    body: str
    per_subtask_sections: Optional[dict[str, str]] = None

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError(f"report {self.id}: body must be non-empty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "problem_id": self.problem_id,
            "model_name": self.model_name,
            "body": self.body,
            "per_subtask_sections": self.per_subtask_sections,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Report":
        sections = d.get("per_subtask_sections")
        return cls(
            id=d["id"],
            problem_id=d["problem_id"],
            model_name=d["model_name"],
            body=d["body"],
            per_subtask_sections=dict(sections) if sections is not None else None,
        )


@dataclass(frozen=True)
class CriterionScore:
    """A judge's verdict on one criterion for one report."""

    criterion_id: str
    report_id: str
    rater_id: str
    level: VerdictLevel
    awarded: float
    comment: str = ""

    def to_dict(self) -> dict:
        return {
            "criterion_id": self.criterion_id,
            "report_id": self.report_id,
            "rater_id": self.rater_id,
            "level": self.level.value,
            "awarded": self.awarded,
            "comment": self.comment,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CriterionScore":
        return cls(
            criterion_id=d["criterion_id"],
            report_id=d["report_id"],
            rater_id=d["rater_id"],
            level=VerdictLevel.from_name(d["level"]),
            awarded=float(d["awarded"]),
            comment=d.get("comment", ""),
        )


@dataclass(frozen=True)
class ScoreProfile:
    """Rollup lattice for one (report, rater): criterion -> stage -> subtask -> report.

    ``stage_scores`` is keyed by (subtask_id, stage); all rollups are on the
    10-point scale and must be reproducible from ``criterion_scores`` by the
    aggregation rules.
    """

    report_id: str
    rater_id: str
    criterion_scores: tuple[CriterionScore, ...]
    stage_scores: dict[tuple[str, Stage], float]
    subtask_scores: dict[str, float]
    report_score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "criterion_scores", tuple(self.criterion_scores))

    def to_dict(self) -> dict:
        nested: dict[str, dict[str, float]] = {}
        for (subtask_id, stage), value in sorted(
            self.stage_scores.items(), key=lambda kv: (kv[0][0], kv[0][1].order)
        ):
            nested.setdefault(subtask_id, {})[stage.value] = value
        return {
            "report_id": self.report_id,
            "rater_id": self.rater_id,
            "criterion_scores": [s.to_dict() for s in self.criterion_scores],
            "stage_scores": nested,
            "subtask_scores": dict(sorted(self.subtask_scores.items())),
            "report_score": self.report_score,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreProfile":
        stage_scores = {
            (subtask_id, Stage.from_name(name)): value
            for subtask_id, per_stage in d.get("stage_scores", {}).items()
            for name, value in per_stage.items()
        }
        return cls(
            report_id=d["report_id"],
            rater_id=d["rater_id"],
            criterion_scores=tuple(
                CriterionScore.from_dict(s) for s in d.get("criterion_scores", [])
            ),
            stage_scores=stage_scores,
            subtask_scores=dict(d.get("subtask_scores", {})),
            report_score=float(d["report_score"]),
        )


@dataclass(frozen=True)
class BaselineScore:
    """Coarse four-dimension score of a report under the comparison rubric."""

    report_id: str
    rater_id: str
    dims: dict[BaselineDimension, float]
    average: float

    def __post_init__(self) -> None:
        missing = set(BaselineDimension) - set(self.dims)
        if missing:
            names = sorted(d.value for d in missing)
            raise ValueError(f"baseline score missing dimensions: {names}")

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "rater_id": self.rater_id,
            "dims": {dim.value: v for dim, v in sorted(self.dims.items(), key=lambda kv: kv[0].value)},
            "average": self.average,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BaselineScore":
        return cls(
            report_id=d["report_id"],
            rater_id=d["rater_id"],
            dims={BaselineDimension(name): float(v) for name, v in d["dims"].items()},
            average=float(d["average"]),
        )


@dataclass(frozen=True)
class RaterMatrix:
    """Complete items x raters score grid.

    Construction enforces completeness (rectangular, finite, no missing
    cells); the >= 2 items / >= 2 raters requirement is enforced where the
    statistic is computed.
    """

    item_ids: tuple[str, ...]
    rater_ids: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "rater_ids", tuple(self.rater_ids))
        rows = tuple(tuple(float(v) for v in row) for row in self.values)
        object.__setattr__(self, "values", rows)
        if len(rows) != len(self.item_ids):
            raise ValueError(
                f"matrix has {len(rows)} rows for {len(self.item_ids)} items"
            )
        for item_id, row in zip(self.item_ids, rows):
            if len(row) != len(self.rater_ids):
                raise ValueError(
                    f"item {item_id}: {len(row)} cells for {len(self.rater_ids)} raters"
                )
            for v in row:
                if v != v or v in (float("inf"), float("-inf")):
                    raise ValueError(f"item {item_id}: non-finite cell value {v}")

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def k(self) -> int:
        return len(self.rater_ids)

    def to_dict(self) -> dict:
        return {
            "item_ids": list(self.item_ids),
            "rater_ids": list(self.rater_ids),
            "values": [list(row) for row in self.values],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RaterMatrix":
        return cls(
            item_ids=tuple(d["item_ids"]),
            rater_ids=tuple(d["rater_ids"]),
            values=tuple(tuple(row) for row in d["values"]),
        )


@dataclass(frozen=True)
class Violation:
    """One broken rubric or score rule: which rule, on what, what was seen."""

    rule: str
    subject: str
    observed: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.rule}: {self.observed}"


# Criteria-per-stage bounds and the per-stage point budget.
MIN_CRITERIA_PER_STAGE = 3
MAX_CRITERIA_PER_STAGE = 5
STAGE_POINT_BUDGET = 100


def validate_rubric(rubric: Rubric) -> list[Violation]:
    """Check every rubric invariant; return one violation per broken rule.

    An empty result means the rubric is valid. Violations are values, not
    errors: generation repair loops echo them back to the model.
    """
    violations: list[Violation] = []

    for name in TaskUnderstanding.FIELDS:
        if not str(getattr(rubric.understanding, name)).strip():
            violations.append(
                Violation("understanding_incomplete", name, "field is empty")
            )

    for stage in Stage:
        scored = stage in rubric.stage_criteria
        excluded = stage in rubric.not_applicable
        if scored and excluded:
            violations.append(
                Violation(
                    "dual_applicability",
                    stage.value,
                    "stage has criteria and a not-applicable reason",
                )
            )
        if not scored and not excluded:
            violations.append(
                Violation(
                    "stage_missing",
                    stage.value,
                    "stage has neither criteria nor a not-applicable reason",
                )
            )
        if excluded and not str(rubric.not_applicable[stage]).strip():
            violations.append(
                Violation("empty_reason", stage.value, "not-applicable reason is empty")
            )
        if not scored:
            continue

        crits = rubric.stage_criteria[stage]
        count = len(crits)
        if count < MIN_CRITERIA_PER_STAGE:
            violations.append(
                Violation(
                    "criteria_count",
                    stage.value,
                    f"criteria count {count} < {MIN_CRITERIA_PER_STAGE}",
                )
            )
        elif count > MAX_CRITERIA_PER_STAGE:
            violations.append(
                Violation(
                    "criteria_count",
                    stage.value,
                    f"criteria count {count} > {MAX_CRITERIA_PER_STAGE}",
                )
            )

        for c in crits:
            if not (isinstance(c.points, int) and 1 <= c.points <= 100):
                violations.append(
                    Violation(
                        "points_range",
                        stage.value,
                        f"criterion {c.name!r} points {c.points} outside [1, 100]",
                    )
                )
            if not c.name.strip():
                violations.append(
                    Violation("empty_name", stage.value, "criterion name is empty")
                )
            if not c.scoring_hint.strip():
                violations.append(
                    Violation(
                        "empty_scoring_hint",
                        stage.value,
                        f"criterion {c.name!r} scoring hint is empty",
                    )
                )
            if c.stage is not stage:
                violations.append(
                    Violation(
                        "stage_mismatch",
                        stage.value,
                        f"criterion {c.name!r} tagged {c.stage.value}",
                    )
                )
            if c.subtask_id != rubric.subtask_id:
                violations.append(
                    Violation(
                        "foreign_subtask",
                        stage.value,
                        f"criterion {c.name!r} belongs to subtask {c.subtask_id}",
                    )
                )

        total = sum(c.points for c in crits)
        if total != STAGE_POINT_BUDGET:
            violations.append(
                Violation(
                    "points_sum",
                    stage.value,
                    f"points sum {total} != {STAGE_POINT_BUDGET}",
                )
            )

    return violations


def validate_score(
    score: CriterionScore, criterion: Criterion, bands=None
) -> list[Violation]:
    """Check one criterion score against its criterion.

    Rules: awarded within [0, points], verdict level consistent with the
    awarded fraction under the band table, and an evidence comment present
    whenever the level is below FullyMet.
    """
    if score.criterion_id != criterion.id:
        raise CrossReferenceError(
            f"score refers to criterion {score.criterion_id}, got {criterion.id}"
        )
    if bands is None:
        from .judging import DEFAULT_BANDS

        bands = DEFAULT_BANDS

    violations: list[Violation] = []
    subject = criterion.name or criterion.id

    if not 0 <= score.awarded <= criterion.points:
        violations.append(
            Violation(
                "awarded_bounds",
                subject,
                f"awarded {_fmt(score.awarded)} outside [0, {criterion.points}]",
            )
        )
        return violations

    expected = bands.level_for_fraction(score.awarded / criterion.points)
    if expected is not score.level:
        violations.append(
            Violation(
                "band_mismatch",
                subject,
                f"level {score.level.value} but awarded {_fmt(score.awarded)}"
                f"/{criterion.points} falls in {expected.value}",
            )
        )

    if score.level is not VerdictLevel.FULLY_MET and not score.comment.strip():
        violations.append(
            Violation(
                "comment_missing",
                subject,
                f"level {score.level.value} requires an evidence comment",
            )
        )
    return violations


def _fmt(x: float) -> str:
    return f"{x:g}"


def sort_stages(stages: Iterable[Stage]) -> list[Stage]:
    """Return the stages in canonical pipeline order."""
    return sorted(stages, key=lambda s: s.order)


def index_criteria(rubrics: Iterable[Rubric]) -> dict[str, Criterion]:
    """Map criterion id -> criterion over a collection of rubrics."""
    index: dict[str, Criterion] = {}
    for rubric in rubrics:
        for criterion in rubric.criteria():
            index[criterion.id] = criterion
    return index
