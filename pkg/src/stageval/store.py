"""Crash-safe on-disk store for evaluation runs.

Layout under the store root::

    dataset.json
    runs/{run_id}/run.json          run state, watermark, idempotency keys
    runs/{run_id}/journal.jsonl     append-only mutation journal (fsynced)
    runs/{run_id}/subtasks.json
    runs/{run_id}/rubrics/{subtask_id}.json
    runs/{run_id}/scores/{report_id}/{rater_id}.jsonl
    runs/{run_id}/profiles/{report_id}/{rater_id}.json
    runs/{run_id}/baseline/{report_id}/{rater_id}.json
    runs/{run_id}/raw/{seq}.{tag}.json
    runs/{run_id}/stage_means.csv, icc_report.json, distributions.csv
    runs/{run_id}/failures/{stage}.csv, failures/assignments.jsonl

Durability protocol for reviewer mutations: append the journal entry and
fsync it first, then rewrite the affected document atomically (temp file
then rename), then advance the watermark (journal_seq) in run.json. A
crash at any point leaves every JSON document intact; recovery replays
journal entries past the watermark, skipping ones whose effects already
landed. Document writes always go through temp-then-rename, so no reader
ever observes a torn file.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .errors import LoadError, StateError
from .forge import AuditRecord, apply_revision
from .ingest import Dataset
from .model import Criterion, CriterionScore, BaselineScore, Rubric, ScoreProfile, Subtask

logger = logging.getLogger(__name__)

Clock = Callable[[], str]


def utc_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


RUN_STATES = (
    "decomposing",
    "awaiting_subtask_review",
    "generating_rubrics",
    "awaiting_rubric_review",
    "judging",
    "complete",
    "failed",
)

RUN_TRANSITIONS: dict[str, frozenset[str]] = {
    "decomposing": frozenset({"awaiting_subtask_review", "failed"}),
    "awaiting_subtask_review": frozenset({"decomposing", "generating_rubrics"}),
    "generating_rubrics": frozenset({"awaiting_rubric_review", "failed"}),
    "awaiting_rubric_review": frozenset({"generating_rubrics", "judging"}),
    "judging": frozenset({"complete", "failed"}),
    "complete": frozenset({"judging"}),
    "failed": frozenset({"decomposing", "generating_rubrics", "judging"}),
}


@dataclass(frozen=True)
class RunState:
    """Everything run.json holds about one evaluation run."""

    run_id: str
    problem_id: str
    state: str
    language: str = "en"
    review_mode: bool = True
    created_at: str = ""
    updated_at: str = ""
    journal_seq: int = 0
    applied_keys: dict[str, int] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "problem_id": self.problem_id,
            "state": self.state,
            "language": self.language,
            "review_mode": self.review_mode,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "journal_seq": self.journal_seq,
            "applied_keys": dict(sorted(self.applied_keys.items())),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunState":
        return cls(
            run_id=d["run_id"],
            problem_id=d["problem_id"],
            state=d["state"],
            language=d.get("language", "en"),
            review_mode=d.get("review_mode", True),
            created_at=d.get("created_at", ""),
            updated_at=d.get("updated_at", ""),
            journal_seq=d.get("journal_seq", 0),
            applied_keys=dict(d.get("applied_keys", {})),
            error=d.get("error"),
        )


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def dump_jsonl_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write(path: str, text: str) -> None:
    """Write a file so readers see either the old or the new content."""
    directory = os.path.dirname(path)
    os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


_SAFE_SEGMENT = re.compile(r"^[A-Za-z0-9._-]+$")


def _check_segment(value: str, what: str) -> str:
    if not _SAFE_SEGMENT.match(value):
        raise ValueError(f"{what} {value!r} must match [A-Za-z0-9._-]+")
    return value


class RunStore:
    """Single-writer store for one dataset and its evaluation runs."""

    def __init__(self, root: Union[str, os.PathLike], clock: Optional[Clock] = None):
        self.root = str(root)
        self.clock: Clock = clock or utc_clock
        os.makedirs(self.root, exist_ok=True)
        self._locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, run_id: str) -> threading.RLock:
        with self._locks_guard:
            if run_id not in self._locks:
                self._locks[run_id] = threading.RLock()
            return self._locks[run_id]

    # paths

    def _dataset_path(self) -> str:
        return os.path.join(self.root, "dataset.json")

    def run_dir(self, run_id: str) -> str:
        return os.path.join(self.root, "runs", _check_segment(run_id, "run id"))

    def _run_path(self, run_id: str) -> str:
        return os.path.join(self.run_dir(run_id), "run.json")

    def _journal_path(self, run_id: str) -> str:
        return os.path.join(self.run_dir(run_id), "journal.jsonl")

    # dataset

    def save_dataset(self, dataset: Dataset) -> None:
        atomic_write(self._dataset_path(), dump_json(dataset.to_dict()))

    def load_dataset(self) -> Dataset:
        path = self._dataset_path()
        if not os.path.exists(path):
            raise LoadError(f"no dataset ingested at {self.root}")
        return Dataset.from_dict(read_json(path))

    # runs

    def create_run(
        self,
        run_id: str,
        problem_id: str,
        language: str = "en",
        review_mode: bool = True,
    ) -> RunState:
        path = self._run_path(run_id)
        if os.path.exists(path):
            raise StateError(f"run {run_id} already exists")
        now = self.clock()
        run = RunState(
            run_id=run_id,
            problem_id=problem_id,
            state="decomposing",
            language=language,
            review_mode=review_mode,
            created_at=now,
            updated_at=now,
        )
        atomic_write(path, dump_json(run.to_dict()))
        return run

    def list_runs(self) -> list[RunState]:
        runs_dir = os.path.join(self.root, "runs")
        if not os.path.isdir(runs_dir):
            return []
        out = []
        for name in sorted(os.listdir(runs_dir)):
            path = os.path.join(runs_dir, name, "run.json")
            if os.path.isfile(path):
                out.append(RunState.from_dict(read_json(path)))
        return out

    def load_run(self, run_id: str) -> RunState:
        path = self._run_path(run_id)
        if not os.path.exists(path):
            raise LookupError(f"no run {run_id}")
        return RunState.from_dict(read_json(path))

    def save_run(self, run: RunState) -> RunState:
        stamped = replace(run, updated_at=self.clock())
        atomic_write(self._run_path(run.run_id), dump_json(stamped.to_dict()))
        return stamped

    def set_state(
        self, run_id: str, new_state: str, error: Optional[str] = None
    ) -> RunState:
        if new_state not in RUN_STATES:
            raise ValueError(f"unknown run state {new_state!r}")
        with self._lock(run_id):
            run = self.load_run(run_id)
            allowed = RUN_TRANSITIONS[run.state]
            if new_state not in allowed:
                raise StateError(
                    f"run {run_id}: cannot move from {run.state} to {new_state}"
                )
            return self.save_run(replace(run, state=new_state, error=error))

    # journal

    def journal_append(self, run_id: str, kind: str, payload: Mapping[str, Any]) -> int:
        """Durably append one entry; returns its sequence number."""
        entries = self.read_journal(run_id)
        seq = (entries[-1]["seq"] + 1) if entries else 1
        entry = {"seq": seq, "ts": self.clock(), "kind": kind, **dict(payload)}
        path = self._journal_path(run_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(dump_jsonl_line(entry))
            f.flush()
            os.fsync(f.fileno())
        return seq

    def read_journal(self, run_id: str) -> list[dict]:
        """All journal entries. A torn final line (crash mid-append) is
        dropped; a torn earlier line is corruption and fails."""
        path = self._journal_path(run_id)
        if not os.path.exists(path):
            return []
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
        entries: list[dict] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if i == len(lines) - 1:
                    logger.warning(
                        "run %s: dropping torn journal tail line", run_id
                    )
                    break
                raise LoadError(
                    f"run {run_id}: corrupt journal line {i + 1}: {exc}"
                ) from exc
        return entries

    # documents

    def save_subtasks(self, run_id: str, subtasks: Sequence[Subtask]) -> None:
        path = os.path.join(self.run_dir(run_id), "subtasks.json")
        payload = {"subtasks": [s.to_dict() for s in subtasks]}
        atomic_write(path, dump_json(payload))

    def load_subtasks(self, run_id: str) -> list[Subtask]:
        path = os.path.join(self.run_dir(run_id), "subtasks.json")
        if not os.path.exists(path):
            return []
        return [Subtask.from_dict(d) for d in read_json(path)["subtasks"]]

    def save_rubric(self, run_id: str, rubric: Rubric) -> None:
        path = os.path.join(
            self.run_dir(run_id),
            "rubrics",
            f"{_check_segment(rubric.subtask_id, 'subtask id')}.json",
        )
        atomic_write(path, dump_json(rubric.to_dict()))

    def load_rubric(self, run_id: str, subtask_id: str) -> Rubric:
        path = os.path.join(
            self.run_dir(run_id),
            "rubrics",
            f"{_check_segment(subtask_id, 'subtask id')}.json",
        )
        if not os.path.exists(path):
            raise LookupError(f"no rubric for subtask {subtask_id}")
        return Rubric.from_dict(read_json(path))

    def list_rubrics(self, run_id: str) -> dict[str, Rubric]:
        rubrics_dir = os.path.join(self.run_dir(run_id), "rubrics")
        if not os.path.isdir(rubrics_dir):
            return {}
        out: dict[str, Rubric] = {}
        for name in sorted(os.listdir(rubrics_dir)):
            if name.endswith(".json"):
                rubric = Rubric.from_dict(read_json(os.path.join(rubrics_dir, name)))
                out[rubric.subtask_id] = rubric
        return out

    def _pair_path(
        self, run_id: str, kind: str, report_id: str, rater_id: str, ext: str
    ) -> str:
        return os.path.join(
            self.run_dir(run_id),
            kind,
            _check_segment(report_id, "report id"),
            f"{_check_segment(rater_id, 'rater id')}.{ext}",
        )

    def save_scores(
        self,
        run_id: str,
        report_id: str,
        rater_id: str,
        scores: Sequence[CriterionScore],
    ) -> None:
        path = self._pair_path(run_id, "scores", report_id, rater_id, "jsonl")
        text = "".join(dump_jsonl_line(s.to_dict()) for s in scores)
        atomic_write(path, text)

    def load_scores(
        self, run_id: str, report_id: str, rater_id: str
    ) -> list[CriterionScore]:
        path = self._pair_path(run_id, "scores", report_id, rater_id, "jsonl")
        if not os.path.exists(path):
            return []
        with open(path, "r", encoding="utf-8") as f:
            return [
                CriterionScore.from_dict(json.loads(line))
                for line in f
                if line.strip()
            ]

    def list_score_sets(self, run_id: str) -> list[tuple[str, str]]:
        return self._list_pairs(run_id, "scores", ".jsonl")

    def save_profile(self, run_id: str, profile: ScoreProfile) -> None:
        path = self._pair_path(
            run_id, "profiles", profile.report_id, profile.rater_id, "json"
        )
        atomic_write(path, dump_json(profile.to_dict()))

    def load_profiles(self, run_id: str) -> list[ScoreProfile]:
        out = []
        for report_id, rater_id in self._list_pairs(run_id, "profiles", ".json"):
            path = self._pair_path(run_id, "profiles", report_id, rater_id, "json")
            out.append(ScoreProfile.from_dict(read_json(path)))
        return out

    def save_baseline(self, run_id: str, score: BaselineScore) -> None:
        path = self._pair_path(
            run_id, "baseline", score.report_id, score.rater_id, "json"
        )
        atomic_write(path, dump_json(score.to_dict()))

    def load_baselines(self, run_id: str) -> list[BaselineScore]:
        out = []
        for report_id, rater_id in self._list_pairs(run_id, "baseline", ".json"):
            path = self._pair_path(run_id, "baseline", report_id, rater_id, "json")
            out.append(BaselineScore.from_dict(read_json(path)))
        return out

    def _list_pairs(self, run_id: str, kind: str, ext: str) -> list[tuple[str, str]]:
        base = os.path.join(self.run_dir(run_id), kind)
        if not os.path.isdir(base):
            return []
        pairs = []
        for report_id in sorted(os.listdir(base)):
            report_dir = os.path.join(base, report_id)
            if not os.path.isdir(report_dir):
                continue
            for name in sorted(os.listdir(report_dir)):
                if name.endswith(ext):
                    pairs.append((report_id, name[: -len(ext)]))
        return pairs

    # raw call archive

    def archive_raw(self, run_id: str, tag: str, record: Mapping[str, Any]) -> str:
        raw_dir = os.path.join(self.run_dir(run_id), "raw")
        os.makedirs(raw_dir, exist_ok=True)
        existing = [n for n in os.listdir(raw_dir) if n.endswith(".json")]
        seq = len(existing) + 1
        safe_tag = re.sub(r"[^A-Za-z0-9._-]", "_", tag)[:120]
        path = os.path.join(raw_dir, f"{seq:06d}.{safe_tag}.json")
        atomic_write(path, dump_json({"tag": tag, **dict(record)}))
        return path

    def archiver(self, run_id: str) -> Callable[[str, dict], None]:
        def archive(tag: str, record: dict) -> None:
            self.archive_raw(run_id, tag, record)

        return archive

    # derived artifacts

    def write_stage_means_csv(
        self, run_id: str, means: Mapping[str, Mapping[Any, float]]
    ) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "stage", "mean"])
        for model in sorted(means):
            for stage in sorted(means[model]):
                writer.writerow([model, stage.value, repr(means[model][stage])])
        path = os.path.join(self.run_dir(run_id), "stage_means.csv")
        atomic_write(path, buf.getvalue())
        return path

    def write_icc_report(self, run_id: str, payload: Mapping[str, Any]) -> str:
        path = os.path.join(self.run_dir(run_id), "icc_report.json")
        atomic_write(path, dump_json(dict(payload)))
        return path

    def write_distributions_csv(
        self, run_id: str, rows: Sequence[Mapping[str, Any]]
    ) -> str:
        columns = ["scope", "count", "mean", "stddev", "min", "q1", "median", "q3", "max"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [row["scope"]]
                + [
                    repr(row[c]) if isinstance(row[c], float) else row[c]
                    for c in columns[1:]
                ]
            )
        path = os.path.join(self.run_dir(run_id), "distributions.csv")
        atomic_write(path, buf.getvalue())
        return path

    def write_failures(
        self,
        run_id: str,
        tables: Mapping[Any, Sequence[Any]],
        assignments: Sequence[Any],
    ) -> list[str]:
        """Write per-stage prevalence CSVs plus the raw assignment lines."""
        failures_dir = os.path.join(self.run_dir(run_id), "failures")
        written = []
        for stage in sorted(tables, key=lambda s: s.order):
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["model", "label", "fraction", "count", "total"])
            for row in tables[stage]:
                d = row.to_dict()
                writer.writerow(
                    [d["model"], d["label"], d["fraction"], d["count"], d["total"]]
                )
            path = os.path.join(failures_dir, f"{stage.value}.csv")
            atomic_write(path, buf.getvalue())
            written.append(path)
        lines = "".join(dump_jsonl_line(a.to_dict()) for a in assignments)
        path = os.path.join(failures_dir, "assignments.jsonl")
        atomic_write(path, lines)
        written.append(path)
        return written

    # reviewer mutations

    def apply_decision(
        self,
        run_id: str,
        entity_kind: str,
        entity_id: str,
        action: str,
        edits: Optional[Mapping[str, Any]] = None,
        editor: str = "",
        idempotency_key: Optional[str] = None,
    ) -> tuple[Union[Subtask, Criterion], Optional[AuditRecord], bool]:
        """Transactionally apply one reviewer decision.

        Returns (entity, audit, replayed). With a previously seen
        idempotency key the stored entity is returned unchanged and
        ``replayed`` is True.
        """
        with self._lock(run_id):
            # heal any crash that left journaled work unapplied before
            # taking new mutations on top of it
            self.recover(run_id)
            run = self.load_run(run_id)
            if idempotency_key and idempotency_key in run.applied_keys:
                entity = self._load_entity(run_id, entity_kind, entity_id)
                return entity, None, True

            entity = self._load_entity(run_id, entity_kind, entity_id)
            revised, audit = apply_revision(entity, action, edits, editor)

            seq = self.journal_append(
                run_id,
                "decision",
                {
                    "entity_kind": entity_kind,
                    "entity_id": entity_id,
                    "action": action,
                    "edits": dict(edits or {}),
                    "editor": editor,
                    "idempotency_key": idempotency_key,
                    "before_revision": audit.before_revision,
                    "after_revision": audit.after_revision,
                },
            )
            self._store_entity(run_id, revised)
            updated = replace(run, journal_seq=seq)
            if idempotency_key:
                keys = dict(run.applied_keys)
                keys[idempotency_key] = seq
                updated = replace(updated, applied_keys=keys)
            self.save_run(updated)
            return revised, audit, False

    def _load_entity(
        self, run_id: str, entity_kind: str, entity_id: str
    ) -> Union[Subtask, Criterion]:
        if entity_kind == "subtask":
            for s in self.load_subtasks(run_id):
                if s.id == entity_id:
                    return s
            raise LookupError(f"no subtask {entity_id} in run {run_id}")
        if entity_kind == "criterion":
            for rubric in self.list_rubrics(run_id).values():
                for c in rubric.criteria():
                    if c.id == entity_id:
                        return c
            raise LookupError(f"no criterion {entity_id} in run {run_id}")
        raise ValueError(f"unknown entity kind {entity_kind!r}")

    def _store_entity(self, run_id: str, entity: Union[Subtask, Criterion]) -> None:
        if isinstance(entity, Subtask):
            subtasks = self.load_subtasks(run_id)
            updated = [entity if s.id == entity.id else s for s in subtasks]
            self.save_subtasks(run_id, updated)
            return
        rubric = self._rubric_holding(run_id, entity.id)
        stage_criteria = {
            stage: tuple(entity if c.id == entity.id else c for c in crits)
            for stage, crits in rubric.stage_criteria.items()
        }
        self.save_rubric(run_id, replace(rubric, stage_criteria=stage_criteria))

    def _rubric_holding(self, run_id: str, criterion_id: str) -> Rubric:
        for rubric in self.list_rubrics(run_id).values():
            if any(c.id == criterion_id for c in rubric.criteria()):
                return rubric
        raise LookupError(f"no rubric holds criterion {criterion_id}")

    # recovery

    def recover(self, run_id: str) -> int:
        """Replay journal entries past the watermark; returns how many
        needed replaying. Entries whose effects already reached the
        documents are detected by revision and skipped idempotently."""
        with self._lock(run_id):
            run = self.load_run(run_id)
            replayed = 0
            for entry in self.read_journal(run_id):
                seq = entry["seq"]
                if seq <= run.journal_seq:
                    continue
                if entry["kind"] == "decision":
                    self._replay_decision(run_id, entry)
                elif entry["kind"] == "import":
                    self._replay_import(run_id, entry)
                else:
                    logger.warning(
                        "run %s: skipping unknown journal kind %r",
                        run_id,
                        entry["kind"],
                    )
                replayed += 1
                run = replace(run, journal_seq=seq)
                key = entry.get("idempotency_key")
                if key:
                    keys = dict(run.applied_keys)
                    keys[key] = seq
                    run = replace(run, applied_keys=keys)
                run = self.save_run(run)
            return replayed

    def _replay_decision(self, run_id: str, entry: Mapping[str, Any]) -> None:
        entity = self._load_entity(run_id, entry["entity_kind"], entry["entity_id"])
        if entity.revision == entry["after_revision"]:
            return
        if entity.revision != entry["before_revision"]:
            raise LoadError(
                f"run {run_id}: journal seq {entry['seq']} expects revision "
                f"{entry['before_revision']}, document has {entity.revision}"
            )
        revised, _ = apply_revision(
            entity, entry["action"], entry.get("edits") or None, entry.get("editor", "")
        )
        self._store_entity(run_id, revised)

    def _replay_import(self, run_id: str, entry: Mapping[str, Any]) -> None:
        for group in entry.get("groups", []):
            report_id, rater_id = group["report_id"], group["rater_id"]
            incoming = [CriterionScore.from_dict(d) for d in group["scores"]]
            self.merge_scores(run_id, report_id, rater_id, incoming)

    def merge_scores(
        self,
        run_id: str,
        report_id: str,
        rater_id: str,
        incoming: Sequence[CriterionScore],
    ) -> list[CriterionScore]:
        """Merge score rows into a rater's file; new rows win per criterion."""
        existing = self.load_scores(run_id, report_id, rater_id)
        by_criterion = {s.criterion_id: s for s in existing}
        for s in incoming:
            by_criterion[s.criterion_id] = s
        merged = [by_criterion[cid] for cid in sorted(by_criterion)]
        self.save_scores(run_id, report_id, rater_id, merged)
        return merged
