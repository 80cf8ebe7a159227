"""HTTP review service over the run store.

Endpoints speak a uniform envelope: {"ok": true, "data": ...} on success,
{"ok": false, "error": {"code", "message"}} on failure. Pipeline steps
that call models (decompose, rubric generation, judging) run on
background threads; clients poll run state. Mutating endpoints require a
bearer token when one is configured, and illegal state transitions come
back as 409 so clients can roll back optimistic UI.
"""

from __future__ import annotations

import logging
import threading
from typing import Any, Callable, Optional

from fastapi import Body, FastAPI, File, Header, UploadFile
from fastapi.responses import JSONResponse

from .engine import Engine
from .errors import (
    CompletenessError,
    DegenerateDesignError,
    DegenerateInputError,
    LoadError,
    StagevalError,
    StateError,
    UndefinedAgreementError,
)
from .gateway import MockProvider
from .model import ReviewStatus, Stage

logger = logging.getLogger(__name__)


def _envelope(data: Any, status: int = 200) -> JSONResponse:
    return JSONResponse({"ok": True, "data": data}, status_code=status)


def _error(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(
        {"ok": False, "error": {"code": code, "message": message}},
        status_code=status,
    )


_STATUS_BY_ERROR: tuple[tuple[type, str, int], ...] = (
    (StateError, "illegal_state", 409),
    (LookupError, "not_found", 404),
    (UndefinedAgreementError, "undefined_agreement", 422),
    (DegenerateDesignError, "degenerate_design", 422),
    (DegenerateInputError, "degenerate_input", 422),
    (CompletenessError, "incomplete", 422),
    (LoadError, "bad_input", 400),
    (ValueError, "bad_input", 400),
    (StagevalError, "pipeline_error", 500),
)


def _guard(fn: Callable[[], Any]) -> JSONResponse:
    try:
        return _envelope(fn())
    except Exception as exc:
        for err_type, code, status in _STATUS_BY_ERROR:
            if isinstance(exc, err_type):
                return _error(code, str(exc), status)
        logger.exception("unhandled service error")
        return _error("internal", str(exc), 500)


class JobRunner:
    """One background thread per run; refuses overlapping jobs."""

    def __init__(self) -> None:
        self._jobs: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()

    def busy(self, run_id: str) -> bool:
        with self._lock:
            thread = self._jobs.get(run_id)
            return thread is not None and thread.is_alive()

    def start(self, run_id: str, target: Callable[[], None]) -> None:
        with self._lock:
            thread = self._jobs.get(run_id)
            if thread is not None and thread.is_alive():
                raise StateError(f"run {run_id} already has a job in progress")
            thread = threading.Thread(target=target, daemon=True)
            self._jobs[run_id] = thread
            thread.start()

    def join_all(self, timeout: float = 30.0) -> None:
        with self._lock:
            threads = list(self._jobs.values())
        for t in threads:
            t.join(timeout)


def create_app(
    engine: Engine, auth_token: str = "", fixture_mode: bool = False
) -> FastAPI:
    app = FastAPI(title="stage-wise report evaluation", docs_url=None, redoc_url=None)
    store = engine.store
    jobs = JobRunner()
    app.state.engine = engine
    app.state.jobs = jobs

    def check_auth(authorization: Optional[str]) -> Optional[JSONResponse]:
        if not auth_token:
            return None
        if authorization != f"Bearer {auth_token}":
            return _error("unauthorized", "missing or wrong bearer token", 401)
        return None

    def fail_run(run_id: str, exc: Exception) -> None:
        try:
            store.set_state(run_id, "failed", error=str(exc))
        except Exception:
            logger.exception("run %s: could not record failure", run_id)

    def spawn_decompose(run_id: str, guidance: str = "") -> None:
        def job() -> None:
            try:
                if guidance:
                    engine.run_decompose(run_id, guidance=guidance)
                else:
                    engine.run_decompose(run_id)
            except Exception as exc:
                logger.exception("run %s: decompose failed", run_id)
                fail_run(run_id, exc)

        jobs.start(run_id, job)

    def spawn_rubrics(run_id: str) -> None:
        def job() -> None:
            try:
                engine.run_rubrics(run_id)
            except Exception:
                logger.exception("run %s: rubric generation failed", run_id)

        jobs.start(run_id, job)

    def spawn_judge(run_id: str, raters: list[str], baseline: bool) -> None:
        def job() -> None:
            try:
                engine.run_judge(run_id, raters)
                if baseline:
                    engine.run_baseline(run_id, raters)
                engine.run_aggregate(run_id)
            except Exception:
                logger.exception("run %s: judging failed", run_id)

        jobs.start(run_id, job)

    @app.get("/runs")
    def list_runs() -> JSONResponse:
        return _guard(lambda: [r.to_dict() for r in store.list_runs()])

    @app.post("/runs")
    def create_run(
        payload: dict = Body(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            problem_id = payload.get("problem_id")
            if not problem_id:
                raise ValueError("problem_id is required")
            run_id = payload.get("run_id") or _derive_run_id(problem_id)
            run = engine.create_run(
                run_id,
                problem_id,
                language=payload.get("language", "en"),
                review_mode=bool(payload.get("review_mode", True)),
            )
            spawn_decompose(run.run_id)
            return run.to_dict()

        def _derive_run_id(problem_id: str) -> str:
            from .model import content_id

            return "run-" + content_id("run", problem_id, store.clock())

        return _guard(act)

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> JSONResponse:
        def act() -> dict:
            run = store.load_run(run_id)
            d = run.to_dict()
            d["job_active"] = jobs.busy(run_id)
            try:
                problem = store.load_dataset().problem(run.problem_id)
            except (LoadError, LookupError):
                pass
            else:
                d["problem"] = {
                    "id": problem.id,
                    "title": problem.title,
                    "statement": problem.statement,
                }
            return d

        return _guard(act)

    @app.get("/runs/{run_id}/subtasks")
    def get_subtasks(run_id: str) -> JSONResponse:
        def act() -> list:
            store.load_run(run_id)
            return [s.to_dict() for s in store.load_subtasks(run_id)]

        return _guard(act)

    @app.post("/runs/{run_id}/subtasks/{subtask_id}/decision")
    def subtask_decision(
        run_id: str,
        subtask_id: str,
        payload: dict = Body(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            subtask = engine.decide_subtask(
                run_id,
                subtask_id,
                payload.get("action", ""),
                edits=payload.get("edits"),
                editor=payload.get("editor", ""),
                idempotency_key=payload.get("idempotency_key"),
            )
            review_complete = engine.subtask_review_complete(run_id)
            rubrics_started = False
            if review_complete and not jobs.busy(run_id):
                spawn_rubrics(run_id)
                rubrics_started = True
            return {
                "subtask": subtask.to_dict(),
                "review_complete": review_complete,
                "rubrics_started": rubrics_started,
            }

        return _guard(act)

    @app.post("/runs/{run_id}/subtasks/regenerate")
    def regenerate_subtasks(
        run_id: str,
        payload: dict = Body(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            guidance = payload.get("guidance", "")
            if not str(guidance).strip():
                raise ValueError("guidance is required to regenerate")
            run = store.load_run(run_id)
            if run.state != "awaiting_subtask_review":
                raise StateError(
                    f"run {run_id}: regeneration requires state "
                    f"awaiting_subtask_review, found {run.state}"
                )
            if jobs.busy(run_id):
                raise StateError(f"run {run_id} already has a job in progress")
            store.set_state(run_id, "decomposing")
            store.journal_append(
                run_id, "regenerate", {"target": "subtasks", "guidance": guidance}
            )
            spawn_decompose(run_id, guidance=str(guidance))
            return {"state": "decomposing"}

        return _guard(act)

    @app.get("/runs/{run_id}/rubrics/{subtask_id}")
    def get_rubric(run_id: str, subtask_id: str) -> JSONResponse:
        def act() -> dict:
            store.load_run(run_id)
            return store.load_rubric(run_id, subtask_id).to_dict()

        return _guard(act)

    @app.post("/runs/{run_id}/criteria/{criterion_id}/decision")
    def criterion_decision(
        run_id: str,
        criterion_id: str,
        payload: dict = Body(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            criterion = engine.decide_criterion(
                run_id,
                criterion_id,
                payload.get("action", ""),
                edits=payload.get("edits"),
                editor=payload.get("editor", ""),
                idempotency_key=payload.get("idempotency_key"),
            )
            rubrics = store.list_rubrics(run_id)
            statuses = [c.status for r in rubrics.values() for c in r.criteria()]
            pending = sum(
                1
                for s in statuses
                if s in (ReviewStatus.GENERATED, ReviewStatus.EDITED)
            )
            # Rubric review parallels subtask review: once every criterion is
            # resolved, any rejection sends its rubric back for regeneration.
            rubrics_restarted = False
            if (
                pending == 0
                and any(s is ReviewStatus.REJECTED for s in statuses)
                and not jobs.busy(run_id)
            ):
                spawn_rubrics(run_id)
                rubrics_restarted = True
            return {
                "criterion": criterion.to_dict(),
                "pending_criteria": pending,
                "rubrics_restarted": rubrics_restarted,
            }

        return _guard(act)

    @app.post("/runs/{run_id}/judge")
    def judge(
        run_id: str,
        payload: dict = Body(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            raters = payload.get("raters") or []
            if not isinstance(raters, list) or not raters:
                raise ValueError("raters must be a non-empty list of rater ids")
            run = store.load_run(run_id)
            if run.state not in ("awaiting_rubric_review", "complete"):
                raise StateError(
                    f"run {run_id}: judging cannot start from {run.state}"
                )
            if jobs.busy(run_id):
                raise StateError(f"run {run_id} already has a job in progress")
            engine._check_judgeable(run_id)
            spawn_judge(run_id, [str(r) for r in raters], bool(payload.get("baseline")))
            return {"state": "judging", "raters": raters}

        return _guard(act)

    @app.get("/runs/{run_id}/profiles")
    def get_profiles(run_id: str) -> JSONResponse:
        def act() -> list:
            store.load_run(run_id)
            return [p.to_dict() for p in store.load_profiles(run_id)]

        return _guard(act)

    @app.post("/runs/{run_id}/expert-scores")
    def expert_scores(
        run_id: str,
        file: UploadFile = File(...),
        authorization: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        denied = check_auth(authorization)
        if denied:
            return denied

        def act() -> dict:
            raw = file.file.read()
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise LoadError(f"expert CSV is not UTF-8: {exc}") from exc
            return engine.import_expert_scores(run_id, text)

        return _guard(act)

    @app.get("/runs/{run_id}/icc")
    def get_icc(
        run_id: str,
        scheme: str = "ours",
        level: str = "report",
        stage: Optional[str] = None,
        expert_collapse: str = "rater_id",
    ) -> JSONResponse:
        def act() -> dict:
            stage_value = Stage.from_name(stage) if stage else None
            return engine.run_icc(
                run_id,
                scheme=scheme,
                level=level,
                stage=stage_value,
                expert_collapse=expert_collapse,
            )

        return _guard(act)

    @app.get("/runs/{run_id}/failures")
    def get_failures(
        run_id: str,
        threshold: float = 8.0,
        rater: Optional[str] = None,
    ) -> JSONResponse:
        def act() -> dict:
            return engine.run_failures(run_id, threshold=threshold, rater_id=rater)

        return _guard(act)

    if fixture_mode:

        @app.get("/debug/mock-calls")
        def mock_calls() -> JSONResponse:
            def act() -> list:
                provider = engine.gateway.provider
                if not isinstance(provider, MockProvider):
                    raise LookupError("provider is not a mock")
                return [
                    {"tag": c.tag, "system": c.system, "user": c.user}
                    for c in provider.calls
                ]

            return _guard(act)

    return app
