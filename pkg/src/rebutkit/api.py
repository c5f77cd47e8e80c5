"""REST facade over sessions, pipelines, and benchmarks.

Single-token bearer auth (desk deployments), a closed error-code set, and a
polling fallback for slow model calls: verdict submissions that outlast the
synchronous window return 202 with a poll URL instead of blocking the
client.

Error codes (closed set):

=============================  ======  =========================================
code                           status  raised when
=============================  ======  =========================================
unauthorized                   401     bearer token missing or wrong
missing_field                  400     request body fails validation
invalid_field                  400     body parses but a value is unusable
not_found                      404     unknown session / segment / operation id
invalid_transition             409     verdict or edit not legal at this stage
feedback_rounds_exhausted      409     re-prediction cap hit for this stage
not_all_accepted               409     finalize before every segment accepted
override_outside_allowed_set   422     explicit label outside the allowed set
llm_unavailable                502     backend retries exhausted
llm_unparseable                502     classification re-asks exhausted
=============================  ======  =========================================
"""

from __future__ import annotations

import os
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Optional

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from rebutkit.dataset import load_corpus
from rebutkit.evaluation import BenchmarkParadigm, BenchmarkRunner, RebuttalJudge
from rebutkit.gateway import BackendUnavailable, UnparseableOutput
from rebutkit.records import ContextMode, PaperRecord
from rebutkit.segmentation import EmptyReview
from rebutkit.session import (
    EmptyEdit,
    FeedbackRoundsExhausted,
    InvalidTransition,
    NotAllAccepted,
    OverrideOutsideAllowedSet,
    Session,
    SessionEngine,
    Stage,
    UnknownSegment,
    UnknownSession,
)


@dataclass
class ApiSettings:
    token: str = ""
    sync_timeout_s: float = 30.0

    @classmethod
    def from_env(cls) -> "ApiSettings":
        return cls(
            token=os.environ.get("REBUTKIT_API_TOKEN", ""),
            sync_timeout_s=float(os.environ.get("REBUTKIT_SYNC_TIMEOUT_S", "30")),
        )


class ApiError(Exception):
    def __init__(self, code: str, message: str, status: int, details: Optional[dict] = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status
        self.details = details


_ERROR_MAP = [
    (UnknownSession, "not_found", 404),
    (UnknownSegment, "not_found", 404),
    (OverrideOutsideAllowedSet, "override_outside_allowed_set", 422),
    (FeedbackRoundsExhausted, "feedback_rounds_exhausted", 409),
    (InvalidTransition, "invalid_transition", 409),
    (NotAllAccepted, "not_all_accepted", 409),
    (BackendUnavailable, "llm_unavailable", 502),
    (UnparseableOutput, "llm_unparseable", 502),
    (EmptyReview, "invalid_field", 400),
    (EmptyEdit, "invalid_field", 400),
]


def _to_api_error(exc: Exception) -> ApiError:
    for exc_type, code, status in _ERROR_MAP:
        if isinstance(exc, exc_type):
            return ApiError(code, str(exc), status)
    if isinstance(exc, (ValueError, KeyError)):
        return ApiError("invalid_field", str(exc), 400)
    raise exc


class CreateSessionBody(BaseModel):
    paper_title: str
    paper_content: str
    review: str
    context_mode: str = ContextMode.FULL_PAPER.value
    source_ref: Optional[str] = None


class VerdictBody(BaseModel):
    verdict: str
    feedback: Optional[str] = None
    override: Optional[str] = None


class EditBody(BaseModel):
    text: str


class BenchmarkBody(BaseModel):
    corpus_path: str
    paradigm: str
    context_mode: str = ContextMode.FULL_PAPER.value


def session_view(session: Session) -> dict:
    flows = session.ordered_flows()
    accepted = sum(1 for f in flows if f.stage is Stage.ACCEPTED)
    return {
        "session_id": session.session_id,
        "paper_title": session.paper.title,
        "review": session.review,
        "context_mode": session.context_mode.value,
        "created_at": session.created_at,
        "updated_at": session.updated_at,
        "final_rebuttal": session.final_rebuttal,
        "progress": {"accepted": accepted, "total": len(flows)},
        "segments": [flow.to_dict() for flow in flows],
    }


def create_app(
    engine: SessionEngine,
    runner: Optional[BenchmarkRunner] = None,
    settings: Optional[ApiSettings] = None,
) -> FastAPI:
    settings = settings or ApiSettings.from_env()
    app = FastAPI(title="rebutkit", version="0.1.0")
    executor = ThreadPoolExecutor(max_workers=8)
    pending: dict[str, Future] = {}
    reports: dict[str, dict] = {}

    def require_token(request: Request) -> None:
        header = request.headers.get("Authorization", "")
        presented = header.removeprefix("Bearer ").strip()
        if not settings.token or presented != settings.token:
            raise ApiError("unauthorized", "missing or invalid bearer token", 401)

    auth = Depends(require_token)

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        body = {"code": exc.code, "message": exc.message}
        if exc.details:
            body["details"] = exc.details
        return JSONResponse(status_code=exc.status, content=body)

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={
                "code": "missing_field",
                "message": "request body failed validation",
                "details": {"errors": exc.errors()},
            },
        )

    def run_sync(fn, *args, **kwargs):
        """Run a command; answer 202 + poll URL when it outlasts the window."""
        future = executor.submit(fn, *args, **kwargs)
        try:
            return future.result(timeout=settings.sync_timeout_s), None
        except FutureTimeout:
            operation_id = uuid.uuid4().hex[:12]
            pending[operation_id] = future
            return None, operation_id
        except Exception as exc:  # noqa: BLE001 - mapped to the closed code set
            raise _to_api_error(exc)

    @app.post("/sessions", status_code=201, dependencies=[auth])
    def http_create_session(body: CreateSessionBody):
        try:
            paper = PaperRecord(
                title=body.paper_title, body=body.paper_content, source_ref=body.source_ref
            )
            context_mode = ContextMode(body.context_mode)
        except ValueError as exc:
            raise ApiError("invalid_field", str(exc), 400)
        result, operation_id = run_sync(engine.create_session, paper, body.review, context_mode)
        if operation_id:
            return JSONResponse(
                status_code=202,
                content={"operation_id": operation_id, "poll_url": f"/operations/{operation_id}"},
            )
        return session_view(result)

    @app.get("/sessions/{session_id}", dependencies=[auth])
    def http_get_session(session_id: str):
        try:
            return session_view(engine.get(session_id))
        except Exception as exc:  # noqa: BLE001
            raise _to_api_error(exc)

    @app.post("/sessions/{session_id}/segments/{segment_id}/verdict", dependencies=[auth])
    def http_submit_verdict(session_id: str, segment_id: str, body: VerdictBody):
        try:
            verdict = body.verdict.strip().lower()
        except AttributeError:
            raise ApiError("invalid_field", "verdict must be a string", 400)
        result, operation_id = run_sync(
            engine.submit_verdict,
            session_id,
            segment_id,
            verdict,
            feedback=body.feedback,
            override=body.override,
        )
        if operation_id:
            return JSONResponse(
                status_code=202,
                content={"operation_id": operation_id, "poll_url": f"/operations/{operation_id}"},
            )
        return result.to_dict()

    @app.post("/sessions/{session_id}/segments/{segment_id}/edit", dependencies=[auth])
    def http_edit_rebuttal(session_id: str, segment_id: str, body: EditBody):
        try:
            flow = engine.edit_rebuttal(session_id, segment_id, body.text)
        except Exception as exc:  # noqa: BLE001
            raise _to_api_error(exc)
        return flow.to_dict()

    @app.post("/sessions/{session_id}/finalize", dependencies=[auth])
    def http_finalize(session_id: str):
        result, operation_id = run_sync(engine.finalize, session_id)
        if operation_id:
            return JSONResponse(
                status_code=202,
                content={"operation_id": operation_id, "poll_url": f"/operations/{operation_id}"},
            )
        return {"session_id": session_id, "final_rebuttal": result}

    @app.get("/operations/{operation_id}", dependencies=[auth])
    def http_poll_operation(operation_id: str):
        future = pending.get(operation_id)
        if future is None:
            raise ApiError("not_found", f"unknown operation: {operation_id}", 404)
        if not future.done():
            return JSONResponse(status_code=202, content={"operation_id": operation_id})
        del pending[operation_id]
        try:
            result = future.result()
        except Exception as exc:  # noqa: BLE001
            raise _to_api_error(exc)
        if isinstance(result, Session):
            return session_view(result)
        if isinstance(result, str):
            return {"final_rebuttal": result}
        return result.to_dict()

    @app.post("/benchmarks", status_code=201, dependencies=[auth])
    def http_run_benchmark(body: BenchmarkBody):
        if runner is None:
            raise ApiError("invalid_field", "benchmarking is not enabled on this server", 400)
        try:
            records, _ = load_corpus(body.corpus_path)
            paradigm = BenchmarkParadigm(body.paradigm)
            context_mode = ContextMode(body.context_mode)
        except FileNotFoundError as exc:
            raise ApiError("not_found", str(exc), 404)
        except Exception as exc:  # noqa: BLE001
            raise _to_api_error(exc)
        report = runner.run(records, paradigm, context_mode)
        report_id = uuid.uuid4().hex[:12]
        reports[report_id] = report.to_dict()
        return {"report_id": report_id, "report": reports[report_id]}

    @app.get("/benchmarks/{report_id}", dependencies=[auth])
    def http_get_report(report_id: str):
        report = reports.get(report_id)
        if report is None:
            raise ApiError("not_found", f"unknown report: {report_id}", 404)
        return report

    return app
