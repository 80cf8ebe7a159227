"""Stage-wise evaluation engine for machine-generated modeling reports."""

__version__ = "0.1.0"

from .errors import StagevalError
from .model import (
    BaselineDimension,
    BaselineScore,
    Criterion,
    CriterionScore,
    Problem,
    RaterMatrix,
    Report,
    ReviewStatus,
    Rubric,
    ScoreProfile,
    Stage,
    Subtask,
    TaskUnderstanding,
    VerdictLevel,
    Violation,
    validate_rubric,
    validate_score,
)

__all__ = [
    "StagevalError",
    "BaselineDimension",
    "BaselineScore",
    "Criterion",
    "CriterionScore",
    "Problem",
    "RaterMatrix",
    "Report",
    "ReviewStatus",
    "Rubric",
    "ScoreProfile",
    "Stage",
    "Subtask",
    "TaskUnderstanding",
    "VerdictLevel",
    "Violation",
    "validate_rubric",
    "validate_score",
]
