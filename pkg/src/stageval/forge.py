"""Subtask decomposition, rubric generation, and reviewer revisions.

Generation calls get a bounded repair loop: structural problems in the
model's JSON are echoed back verbatim, up to two repairs (three attempts),
after which GenerationError carries the full attempt log. Reviewer actions
(approve, edit, reject, regenerate-with-guidance) go through
:func:`apply_revision`, which enforces the status state machine and
returns an audit record for the journal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .errors import GenerationError, JsonExtractionError, StateError
from .gateway import ChatRequest, Gateway, extract_json_block
from .model import (
    Criterion,
    Problem,
    ReviewStatus,
    Rubric,
    Stage,
    STATUS_TRANSITIONS,
    Subtask,
    TaskUnderstanding,
    content_id,
    validate_rubric,
)
from .prompts import get_template

logger = logging.getLogger(__name__)

# Two repairs means three attempts total for generation calls.
FORGE_REPAIR_LIMIT = 2

ArchiveFn = Callable[[str, dict], None]


@dataclass(frozen=True)
class RepairAttempt:
    """One rejected generation attempt: what came back, what was wrong."""

    attempt: int
    problems: tuple[str, ...]
    response_text: str

    def to_dict(self) -> dict:
        return {
            "attempt": self.attempt,
            "problems": list(self.problems),
            "response_text": self.response_text,
        }


@dataclass(frozen=True)
class AuditRecord:
    """What a reviewer decision changed, for the audit trail."""

    entity_kind: str
    entity_id: str
    action: str
    before_status: str
    after_status: str
    before_revision: int
    after_revision: int
    edits: dict[str, Any] = field(default_factory=dict)
    editor: str = ""

    def to_dict(self) -> dict:
        return {
            "entity_kind": self.entity_kind,
            "entity_id": self.entity_id,
            "action": self.action,
            "before_status": self.before_status,
            "after_status": self.after_status,
            "before_revision": self.before_revision,
            "after_revision": self.after_revision,
            "edits": dict(self.edits),
            "editor": self.editor,
        }


_ACTION_TARGETS = {
    "approve": ReviewStatus.APPROVED,
    "edit": ReviewStatus.EDITED,
    "reject": ReviewStatus.REJECTED,
}

# Reviewer-editable fields per entity kind; anything else is structural.
_EDITABLE_FIELDS = {
    Subtask: ("description",),
    Criterion: ("name", "description", "points", "evaluation_focus", "scoring_hint"),
}


def apply_revision(
    entity: Union[Subtask, Criterion],
    action: str,
    edits: Optional[Mapping[str, Any]] = None,
    editor: str = "",
) -> tuple[Union[Subtask, Criterion], AuditRecord]:
    """Apply one reviewer decision; returns the revised entity and an audit.

    Raises StateError for an illegal status transition and ValueError for
    an unknown action or a non-editable field.
    """
    if action not in _ACTION_TARGETS:
        raise ValueError(f"unknown action {action!r}; expected approve/edit/reject")
    target = _ACTION_TARGETS[action]
    allowed = STATUS_TRANSITIONS[entity.status]
    if target not in allowed:
        raise StateError(
            f"{type(entity).__name__.lower()} {entity.id}: cannot {action} "
            f"from status {entity.status.value}"
        )

    edits = dict(edits or {})
    if action != "edit" and edits:
        raise ValueError(f"action {action!r} does not take edits")
    if action == "edit" and not edits:
        raise ValueError("edit action requires at least one field edit")
    editable = _EDITABLE_FIELDS[type(entity)]
    unknown = sorted(set(edits) - set(editable))
    if unknown:
        raise ValueError(
            f"non-editable fields for {type(entity).__name__.lower()}: {unknown}"
        )

    revised = replace(
        entity, status=target, revision=entity.revision + 1, **edits
    )
    audit = AuditRecord(
        entity_kind=type(entity).__name__.lower(),
        entity_id=entity.id,
        action=action,
        before_status=entity.status.value,
        after_status=target.value,
        before_revision=entity.revision,
        after_revision=revised.revision,
        edits=edits,
        editor=editor,
    )
    return revised, audit


def _attachment_names(problem: Problem) -> str:
    return ", ".join(a.name for a in problem.attachments)


def _generation_loop(
    gateway: Gateway,
    system: str,
    user: str,
    tag: str,
    kind: str,
    parse: Callable[[dict], tuple[Any, list[str]]],
    seed: Optional[int],
    archive: Optional[ArchiveFn],
) -> Any:
    """Shared call/parse/repair loop for generation requests."""
    attempts: list[RepairAttempt] = []
    attempt_user = user
    for attempt in range(FORGE_REPAIR_LIMIT + 1):
        request = ChatRequest(
            system=system,
            user=attempt_user,
            seed=seed,
            response_format_hint="json_object",
            tag=tag,
        )
        response = gateway.complete(request)
        if archive is not None:
            archive(
                tag,
                {
                    "kind": kind,
                    "attempt": attempt,
                    "system": system,
                    "user": attempt_user,
                    "response": response.text,
                    "cached": response.cached,
                },
            )
        try:
            payload = extract_json_block(response.text)
        except JsonExtractionError as exc:
            problems = [f"answer is not a JSON object: {exc}"]
        else:
            result, problems = parse(payload)
            if not problems:
                return result

        attempts.append(
            RepairAttempt(
                attempt=attempt,
                problems=tuple(problems),
                response_text=response.text,
            )
        )
        if attempt < FORGE_REPAIR_LIMIT:
            logger.info("%s %s: repairing %d problems", kind, tag, len(problems))
            listed = "\n".join(f"- {p}" for p in problems)
            attempt_user = (
                f"{user}\n\n"
                f"Your previous answer was rejected for these problems:\n{listed}\n"
                f"Return corrected JSON of the same shape, fixing every problem."
            )

    raise GenerationError(
        f"{kind} for {tag} failed after {FORGE_REPAIR_LIMIT + 1} attempts: "
        + "; ".join(attempts[-1].problems),
        attempts=attempts,
    )


def _parse_subtasks(payload: dict, problem: Problem) -> tuple[list[Subtask], list[str]]:
    problems: list[str] = []
    raw = payload.get("subtasks")
    if not isinstance(raw, list) or not raw:
        return [], ["'subtasks' must be a non-empty list"]

    descriptions: list[str] = []
    depends: list[list[int]] = []
    for i, entry in enumerate(raw, start=1):
        if not isinstance(entry, dict):
            problems.append(f"subtask {i}: entry must be an object")
            continue
        desc = entry.get("description")
        if not isinstance(desc, str) or not desc.strip():
            problems.append(f"subtask {i}: description must be a non-empty string")
            desc = ""
        deps = entry.get("depends_on", [])
        if not isinstance(deps, list):
            problems.append(f"subtask {i}: depends_on must be a list of ordinals")
            deps = []
        clean: list[int] = []
        for d in deps:
            if isinstance(d, bool) or not isinstance(d, int) or not 1 <= d < i:
                problems.append(
                    f"subtask {i}: depends_on entry {d!r} must be an ordinal "
                    f"of an earlier subtask"
                )
            else:
                clean.append(d)
        descriptions.append(desc.strip())
        depends.append(sorted(set(clean)))

    if problems:
        return [], problems

    subtasks: list[Subtask] = []
    ids: list[str] = []
    for i, (desc, deps) in enumerate(zip(descriptions, depends), start=1):
        sid = content_id("subtask", problem.id, i, desc)
        ids.append(sid)
        subtasks.append(
            Subtask(
                id=sid,
                problem_id=problem.id,
                ordinal=i,
                description=desc,
                depends_on=tuple(ids[d - 1] for d in deps),
            )
        )
    return subtasks, []


def decompose(
    gateway: Gateway,
    problem: Problem,
    language: str = "en",
    seed: Optional[int] = None,
    guidance: str = "",
    previous: Sequence[Subtask] = (),
    archive: Optional[ArchiveFn] = None,
) -> tuple[list[Subtask], bool]:
    """Split a problem into ordered subtasks.

    With ``guidance`` (regeneration after review), the prompt carries the
    reviewer's note and the previous decomposition. Returns (subtasks,
    unchanged) where ``unchanged`` flags a regeneration that produced the
    same descriptions as before, so reviewers can see the guidance had no
    effect.
    """
    template = get_template("decompose", language)
    system, user = template.render(
        title=problem.title,
        statement=problem.statement,
        attachment_names=_attachment_names(problem),
    )
    if guidance:
        prior = "\n".join(f"{s.ordinal}. {s.description}" for s in previous)
        user = (
            f"{user}\n\n"
            f"A reviewer rejected the previous decomposition:\n{prior}\n\n"
            f"Reviewer guidance:\n{guidance}\n"
            f"Produce a revised decomposition that follows the guidance."
        )

    subtasks = _generation_loop(
        gateway,
        system,
        user,
        tag=f"decompose:{problem.id}",
        kind="decompose",
        parse=lambda payload: _parse_subtasks(payload, problem),
        seed=seed,
        archive=archive,
    )
    unchanged = bool(previous) and [s.description for s in subtasks] == [
        s.description for s in previous
    ]
    return subtasks, unchanged


def _parse_rubric(payload: dict, subtask: Subtask) -> tuple[Optional[Rubric], list[str]]:
    problems: list[str] = []

    raw_tu = payload.get("task_understanding")
    if not isinstance(raw_tu, dict):
        problems.append("'task_understanding' must be an object with five fields")
        raw_tu = {}
    for name in TaskUnderstanding.FIELDS:
        value = raw_tu.get(name)
        if not isinstance(value, str) or not value.strip():
            problems.append(f"task_understanding.{name} must be a non-empty string")
    understanding = TaskUnderstanding(
        **{name: str(raw_tu.get(name, "") or "") for name in TaskUnderstanding.FIELDS}
    )

    raw_ec = payload.get("evaluation_criteria")
    if not isinstance(raw_ec, dict):
        problems.append("'evaluation_criteria' must be an object keyed by stage name")
        raw_ec = {}

    known = {s.value: s for s in Stage}
    stage_criteria: dict[Stage, tuple[Criterion, ...]] = {}
    not_applicable: dict[Stage, str] = {}
    for key, value in raw_ec.items():
        stage = known.get(key)
        if stage is None:
            problems.append(f"unknown stage name {key!r}")
            continue
        if isinstance(value, dict):
            reason = value.get("not_applicable_reason")
            if not isinstance(reason, str) or not reason.strip():
                problems.append(
                    f"{key}: not_applicable_reason must be a non-empty string"
                )
                reason = ""
            not_applicable[stage] = reason.strip()
            continue
        if not isinstance(value, list):
            problems.append(
                f"{key}: must be a list of criteria or a not_applicable_reason object"
            )
            continue
        crits: list[Criterion] = []
        for i, entry in enumerate(value):
            if not isinstance(entry, dict):
                problems.append(f"{key}[{i}]: criterion must be an object")
                continue
            name = entry.get("sub_criteria")
            score = entry.get("score")
            if not isinstance(name, str) or not name.strip():
                problems.append(f"{key}[{i}]: sub_criteria must be a non-empty string")
                name = ""
            if isinstance(score, bool) or not isinstance(score, int):
                problems.append(f"{key}[{i}]: score must be an integer")
                score = 0
            crits.append(
                Criterion(
                    id=content_id("criterion", subtask.id, key, i, name.strip()),
                    subtask_id=subtask.id,
                    stage=stage,
                    name=name.strip(),
                    description=str(entry.get("description", "") or "").strip(),
                    points=score,
                    evaluation_focus=str(entry.get("evaluation_focus", "") or "").strip(),
                    scoring_hint=str(entry.get("scoring_hint", "") or "").strip(),
                )
            )
        stage_criteria[stage] = tuple(crits)

    rubric = Rubric(
        subtask_id=subtask.id,
        understanding=understanding,
        stage_criteria=stage_criteria,
        not_applicable=not_applicable,
    )
    if not problems:
        problems = [str(v) for v in validate_rubric(rubric)]
    if problems:
        return None, problems
    return rubric, []


def generate_rubric(
    gateway: Gateway,
    problem: Problem,
    subtask: Subtask,
    previous_subtasks: Sequence[Subtask] = (),
    language: str = "en",
    seed: Optional[int] = None,
    archive: Optional[ArchiveFn] = None,
) -> Rubric:
    """Generate the full seven-stage rubric for one subtask.

    The prompt sees the subtasks defined before this one so criteria do not
    re-demand earlier work. Output must pass every rubric invariant; broken
    rules are repaired up to the repair limit.
    """
    template = get_template("rubric", language)
    earlier = [s for s in previous_subtasks if s.ordinal < subtask.ordinal]
    rendered_previous = "\n".join(f"{s.ordinal}. {s.description}" for s in earlier)
    system, user = template.render(
        background=problem.title,
        question=problem.statement,
        previous_subtasks=rendered_previous,
        subtask=subtask.description,
    )
    return _generation_loop(
        gateway,
        system,
        user,
        tag=f"rubric:{subtask.id}",
        kind="rubric",
        parse=lambda payload: _parse_rubric(payload, subtask),
        seed=seed,
        archive=archive,
    )
