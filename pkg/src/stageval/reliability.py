"""Inter-rater reliability and score-distribution statistics.

The agreement statistic used throughout is the single-measure, absolute
agreement intraclass correlation from a two-way random-effects model,
usually written ICC(2,1). Given a complete n x k grid (n items scored by
the same k raters), the two-way decomposition without interaction is::

    SS_total = sum_ij (y_ij - grand)^2
    SS_rows  = k * sum_i (row_mean_i - grand)^2      df = n - 1
    SS_cols  = n * sum_j (col_mean_j - grand)^2      df = k - 1
    SS_err   = SS_total - SS_rows - SS_cols          df = (n - 1)(k - 1)

and with the mean squares MS_R, MS_C, MS_E from those::

    ICC(2,1) = (MS_R - MS_E) /
               (MS_R + (k - 1) * MS_E + (k / n) * (MS_C - MS_E))

Conventions enforced here:

* the grid must be complete with n >= 2 items and k >= 2 raters
  (DegenerateDesignError otherwise);
* a grid where every cell is the same value has a zero denominator, so the
  statistic is undefined and UndefinedAgreementError is raised rather than
  returning NaN or a made-up zero;
* a negative estimate is reported as computed, never clamped to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    CompletenessError,
    DegenerateDesignError,
    DegenerateInputError,
    UndefinedAgreementError,
)
from .model import Criterion, RaterMatrix, ScoreProfile, Stage


@dataclass(frozen=True)
class AnovaDecomposition:
    """Two-way ANOVA components for a complete items x raters grid."""

    n: int
    k: int
    grand_mean: float
    ss_rows: float
    ss_cols: float
    ss_err: float
    ss_total: float
    ms_rows: float
    ms_cols: float
    ms_err: float

    @property
    def df_rows(self) -> int:
        return self.n - 1

    @property
    def df_cols(self) -> int:
        return self.k - 1

    @property
    def df_err(self) -> int:
        return (self.n - 1) * (self.k - 1)


@dataclass(frozen=True)
class IccResult:
    """ICC(2,1) estimate plus the mean squares behind it."""

    icc: float
    ms_r: float
    ms_c: float
    ms_e: float
    n: int
    k: int

    def to_dict(self) -> dict:
        return {
            "icc": self.icc,
            "ms_r": self.ms_r,
            "ms_c": self.ms_c,
            "ms_e": self.ms_e,
            "n": self.n,
            "k": self.k,
        }


def anova_two_way(matrix: RaterMatrix) -> AnovaDecomposition:
    """Decompose a complete grid into row, column, and residual variation.

    SS_err is obtained by subtraction; floating-point cancellation can push
    it a hair below zero on near-degenerate grids, so it is floored at 0.
    """
    n, k = matrix.n, matrix.k
    if n < 2 or k < 2:
        raise DegenerateDesignError(
            f"need at least 2 items and 2 raters, got n={n}, k={k}"
        )
    grid = np.asarray(matrix.values, dtype=float)
    grand = float(grid.mean())
    row_means = grid.mean(axis=1)
    col_means = grid.mean(axis=0)

    ss_total = float(((grid - grand) ** 2).sum())
    ss_rows = float(k * ((row_means - grand) ** 2).sum())
    ss_cols = float(n * ((col_means - grand) ** 2).sum())
    ss_err = max(0.0, ss_total - ss_rows - ss_cols)

    return AnovaDecomposition(
        n=n,
        k=k,
        grand_mean=grand,
        ss_rows=ss_rows,
        ss_cols=ss_cols,
        ss_err=ss_err,
        ss_total=ss_total,
        ms_rows=ss_rows / (n - 1),
        ms_cols=ss_cols / (k - 1),
        ms_err=ss_err / ((n - 1) * (k - 1)),
    )


def icc_2_1(matrix: RaterMatrix) -> IccResult:
    """Single-measure absolute-agreement ICC for a complete grid."""
    a = anova_two_way(matrix)
    n, k = a.n, a.k
    denominator = a.ms_rows + (k - 1) * a.ms_err + (k / n) * (a.ms_cols - a.ms_err)
    if denominator == 0:
        raise UndefinedAgreementError(
            "agreement is undefined: the grid shows no variation at all"
        )
    icc = (a.ms_rows - a.ms_err) / denominator
    return IccResult(
        icc=icc, ms_r=a.ms_rows, ms_c=a.ms_cols, ms_e=a.ms_err, n=n, k=k
    )


def build_report_matrix(profiles: Sequence[ScoreProfile]) -> RaterMatrix:
    """Items = reports, raters = rater ids, cells = overall report scores.

    Every (report, rater) pair must appear exactly once and the grid must
    be complete; gaps and duplicates fail with CompletenessError.
    """
    cells: dict[tuple[str, str], float] = {}
    for p in profiles:
        key = (p.report_id, p.rater_id)
        if key in cells:
            raise CompletenessError(f"duplicate profile for {key}")
        cells[key] = p.report_score
    item_ids = tuple(sorted({r for r, _ in cells}))
    rater_ids = tuple(sorted({j for _, j in cells}))
    return _grid_from_cells(cells, item_ids, rater_ids)


def build_criterion_matrix(
    profiles: Sequence[ScoreProfile],
    criteria: Mapping[str, Criterion],
    stage: Optional[Stage] = None,
) -> RaterMatrix:
    """Items = (report, criterion) pairs, cells = awarded fraction x 10.

    Fractions put criteria with different point budgets on one scale. With
    ``stage`` given, only that stage's criteria participate. The grid over
    the surviving items must be complete across raters.
    """
    cells: dict[tuple[str, str], float] = {}
    rater_set: set[str] = set()
    for p in profiles:
        rater_set.add(p.rater_id)
        for s in p.criterion_scores:
            criterion = criteria.get(s.criterion_id)
            if criterion is None:
                raise CompletenessError(f"score for unknown criterion {s.criterion_id}")
            if stage is not None and criterion.stage is not stage:
                continue
            item = f"{p.report_id}:{s.criterion_id}"
            key = (item, p.rater_id)
            if key in cells:
                raise CompletenessError(f"duplicate score for {key}")
            if criterion.points <= 0:
                raise DegenerateInputError(
                    f"criterion {s.criterion_id} carries no points"
                )
            cells[key] = (s.awarded / criterion.points) * 10.0
    if not cells:
        raise DegenerateInputError("no criterion scores matched the selection")
    item_ids = tuple(sorted({i for i, _ in cells}))
    rater_ids = tuple(sorted(rater_set))
    return _grid_from_cells(cells, item_ids, rater_ids)


def _grid_from_cells(
    cells: Mapping[tuple[str, str], float],
    item_ids: tuple[str, ...],
    rater_ids: tuple[str, ...],
) -> RaterMatrix:
    rows = []
    for item in item_ids:
        row = []
        for rater in rater_ids:
            if (item, rater) not in cells:
                raise CompletenessError(f"missing cell for item {item}, rater {rater}")
            row.append(cells[(item, rater)])
        rows.append(tuple(row))
    return RaterMatrix(item_ids=item_ids, rater_ids=rater_ids, values=tuple(rows))


def stage_icc(
    profiles: Sequence[ScoreProfile],
    criteria: Mapping[str, Criterion],
    stage: Stage,
) -> IccResult:
    """Criterion-level agreement restricted to one workflow stage."""
    return icc_2_1(build_criterion_matrix(profiles, criteria, stage=stage))


@dataclass(frozen=True)
class DistributionSummary:
    """Five-number summary plus mean and population standard deviation."""

    count: int
    mean: float
    stddev: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "stddev": self.stddev,
            "min": self.minimum,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.maximum,
        }


def score_distribution(values: Sequence[float]) -> DistributionSummary:
    """Summarize a score sample.

    The standard deviation is the population form (divide by N), and the
    quartiles use linear interpolation between order statistics.
    """
    if not values:
        raise DegenerateInputError("distribution over an empty sample")
    arr = np.asarray(values, dtype=float)
    q1, median, q3 = np.percentile(arr, [25, 50, 75], method="linear")
    return DistributionSummary(
        count=int(arr.size),
        mean=float(arr.mean()),
        stddev=float(arr.std(ddof=0)),
        minimum=float(arr.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(arr.max()),
    )
