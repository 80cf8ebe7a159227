"""Dataset loading: problems, reports, and rater score files.

A dataset is described by a JSON manifest (format version 1) that lists
problems and the machine-generated reports answering them. Long text can
live inline or in side files relative to the manifest. Loading validates
everything up front: duplicate ids, dangling references, and missing files
all fail with LoadError naming the offending entry.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Mapping

from .errors import CompletenessError, LoadError
from .model import Attachment, Problem, RaterMatrix, Report

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Validated problems and reports, indexable by id."""

    problems: tuple[Problem, ...]
    reports: tuple[Report, ...]

    def problem(self, problem_id: str) -> Problem:
        for p in self.problems:
            if p.id == problem_id:
                return p
        raise LoadError(f"unknown problem id {problem_id}")

    def report(self, report_id: str) -> Report:
        for r in self.reports:
            if r.id == report_id:
                return r
        raise LoadError(f"unknown report id {report_id}")

    def reports_for(self, problem_id: str) -> list[Report]:
        return [r for r in self.reports if r.problem_id == problem_id]

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "problems": [p.to_dict() for p in self.problems],
            "reports": [r.to_dict() for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dataset":
        return cls(
            problems=tuple(Problem.from_dict(p) for p in d.get("problems", [])),
            reports=tuple(Report.from_dict(r) for r in d.get("reports", [])),
        )


def _read_text(base_dir: str, rel_path: str, entry: str) -> str:
    path = os.path.join(base_dir, rel_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as exc:
        raise LoadError(f"{entry}: cannot read {rel_path!r}: {exc}") from exc


def _text_field(
    raw: Mapping, inline_key: str, file_key: str, base_dir: str, entry: str
) -> str:
    inline = raw.get(inline_key)
    rel = raw.get(file_key)
    if inline is not None and rel is not None:
        raise LoadError(f"{entry}: give {inline_key} or {file_key}, not both")
    if inline is not None:
        if not isinstance(inline, str):
            raise LoadError(f"{entry}: {inline_key} must be a string")
        return inline
    if rel is not None:
        return _read_text(base_dir, rel, entry)
    raise LoadError(f"{entry}: missing {inline_key} (or {file_key})")


def load_dataset(manifest_path: str) -> Dataset:
    """Load and validate a dataset manifest plus everything it references."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as exc:
        raise LoadError(f"cannot read manifest {manifest_path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest {manifest_path!r} is not valid JSON: {exc}") from exc

    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise LoadError(
            f"manifest version {version!r} unsupported; expected {MANIFEST_VERSION}"
        )
    base_dir = os.path.dirname(os.path.abspath(manifest_path))

    problems: list[Problem] = []
    seen_problems: set[str] = set()
    for i, raw in enumerate(manifest.get("problems", [])):
        entry = f"problems[{i}]"
        pid = raw.get("id")
        if not pid or not isinstance(pid, str):
            raise LoadError(f"{entry}: id must be a non-empty string")
        if pid in seen_problems:
            raise LoadError(f"{entry}: duplicate problem id {pid!r}")
        seen_problems.add(pid)
        statement = _text_field(raw, "statement", "statement_file", base_dir, entry)
        attachments = []
        for j, att in enumerate(raw.get("attachments", [])):
            name, path = att.get("name"), att.get("path")
            if not name or not path:
                raise LoadError(f"{entry}.attachments[{j}]: need name and path")
            full = os.path.join(base_dir, path)
            if not os.path.exists(full):
                raise LoadError(
                    f"{entry}.attachments[{j}]: file {path!r} does not exist"
                )
            attachments.append(Attachment(name=name, path=path))
        try:
            problems.append(
                Problem(
                    id=pid,
                    title=raw.get("title", pid),
                    statement=statement,
                    attachments=tuple(attachments),
                    method_tags=frozenset(raw.get("method_tags", [])),
                    domain_tags=frozenset(raw.get("domain_tags", [])),
                )
            )
        except ValueError as exc:
            raise LoadError(f"{entry}: {exc}") from exc

    reports: list[Report] = []
    seen_reports: set[str] = set()
    for i, raw in enumerate(manifest.get("reports", [])):
        entry = f"reports[{i}]"
        rid = raw.get("id")
        if not rid or not isinstance(rid, str):
            raise LoadError(f"{entry}: id must be a non-empty string")
        if rid in seen_reports:
            raise LoadError(f"{entry}: duplicate report id {rid!r}")
        seen_reports.add(rid)
        pid = raw.get("problem_id")
        if pid not in seen_problems:
            raise LoadError(f"{entry}: problem_id {pid!r} matches no problem")
        body = _text_field(raw, "body", "body_file", base_dir, entry)
        sections = raw.get("per_subtask_sections")
        if sections is not None and not (
            isinstance(sections, dict)
            and all(isinstance(v, str) for v in sections.values())
        ):
            raise LoadError(f"{entry}: per_subtask_sections must map ids to text")
        try:
            reports.append(
                Report(
                    id=rid,
                    problem_id=pid,
                    model_name=raw.get("model_name", rid),
                    body=body,
                    per_subtask_sections=sections,
                )
            )
        except ValueError as exc:
            raise LoadError(f"{entry}: {exc}") from exc

    logger.info(
        "loaded %d problems, %d reports from %s",
        len(problems),
        len(reports),
        manifest_path,
    )
    return Dataset(problems=tuple(problems), reports=tuple(reports))


def load_rater_matrix(
    csv_path: str, value_column_policy: str = "report_level"
) -> RaterMatrix:
    """Read a complete rater grid from long-format CSV.

    Columns: item_id, rater_id, value. Every (item, rater) pair must appear
    exactly once and the grid must be complete. Under the "report_level"
    policy values must lie in [0, 10]; "criterion_level" leaves the range
    unchecked.
    """
    if value_column_policy not in ("report_level", "criterion_level"):
        raise LoadError(f"unknown value column policy {value_column_policy!r}")

    cells: dict[tuple[str, str], float] = {}
    try:
        with open(csv_path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            fields = set(reader.fieldnames or [])
            needed = {"item_id", "rater_id", "value"}
            if not needed <= fields:
                raise LoadError(
                    f"{csv_path}: need columns item_id, rater_id, value; "
                    f"got {sorted(fields)}"
                )
            for line, row in enumerate(reader, start=2):
                item, rater = row["item_id"], row["rater_id"]
                if not item or not rater:
                    raise LoadError(f"{csv_path}:{line}: empty item_id or rater_id")
                try:
                    value = float(row["value"])
                except (TypeError, ValueError):
                    raise LoadError(
                        f"{csv_path}:{line}: value {row['value']!r} is not a number"
                    ) from None
                if value_column_policy == "report_level" and not 0 <= value <= 10:
                    raise LoadError(
                        f"{csv_path}:{line}: value {value} outside [0, 10]"
                    )
                key = (item, rater)
                if key in cells:
                    raise CompletenessError(
                        f"{csv_path}:{line}: duplicate cell for item {item!r}, "
                        f"rater {rater!r}"
                    )
                cells[key] = value
    except OSError as exc:
        raise LoadError(f"cannot read {csv_path!r}: {exc}") from exc

    if not cells:
        raise LoadError(f"{csv_path}: no score rows")
    item_ids = tuple(sorted({i for i, _ in cells}))
    rater_ids = tuple(sorted({r for _, r in cells}))
    for item in item_ids:
        for rater in rater_ids:
            if (item, rater) not in cells:
                raise CompletenessError(
                    f"{csv_path}: missing cell for item {item!r}, rater {rater!r}"
                )
    values = tuple(
        tuple(cells[(item, rater)] for rater in rater_ids) for item in item_ids
    )
    return RaterMatrix(item_ids=item_ids, rater_ids=rater_ids, values=values)
