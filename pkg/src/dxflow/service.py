"""HTTP service exposing the engine over JSON.

Endpoints: POST /v1/plans, POST /v1/diagnose, GET /v1/tools and the
GET /healthz probe. Diagnosis responses are byte-identical to what the
CLI writes for the same inputs and configuration.
"""
from __future__ import annotations

import logging
import tempfile
import time
import uuid
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from .engine import Engine
from .errors import EngineError, ValidationError
from .model import PatientCase
from .planning import DiagnosticPlan, load_plan, validate_plan
from .serde import load_json, require_mapping

logger = logging.getLogger("dxflow.service")


def create_app(engine: Engine, work_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="dxflow", docs_url=None, redoc_url=None)
    runs_root = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="dxflow-serve-"))

    def _bad_request(exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"error": {"type": type(exc).__name__, "message": str(exc)}},
        )

    def _internal(exc: Exception) -> JSONResponse:
        error_id = uuid.uuid4().hex[:12]
        logger.exception("internal failure %s", error_id)
        return JSONResponse(
            status_code=500,
            content={"error": {"type": type(exc).__name__, "id": error_id}},
        )

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/v1/tools")
    def tools() -> JSONResponse:
        return JSONResponse([t.to_dict() for t in engine.registry])

    @app.post("/v1/plans")
    async def plans(request: Request):
        started = time.perf_counter()
        body = None
        try:
            body = require_mapping(load_json(await request.body()), "plan request")
            disease_id = str(body.get("disease_id", ""))
            backend = str(body.get("backend", "template"))
            if not disease_id:
                raise ValidationError("plan request needs a disease_id")
            plan = engine.build_plan(disease_id, backend=backend)
            doc = plan.to_dict()
            doc["provenance"] = engine.provenance(plan)
            return JSONResponse(doc)
        except ValidationError as exc:
            return _bad_request(exc)
        except EngineError as exc:
            return _internal(exc)
        finally:
            logger.info(
                "POST /v1/plans disease=%s latency_ms=%.1f",
                body.get("disease_id") if isinstance(body, dict) else "?",
                1000 * (time.perf_counter() - started),
            )

    @app.post("/v1/diagnose")
    async def diagnose(request: Request):
        started = time.perf_counter()
        case_id = "?"
        try:
            body = require_mapping(load_json(await request.body()), "diagnose request")
            case = PatientCase.from_dict(require_mapping(body.get("case"), "case"))
            case_id = case.case_id
            if "plan" in body and body["plan"] is not None:
                plan = DiagnosticPlan.from_dict(require_mapping(body["plan"], "plan"))
            elif body.get("plan_path"):
                plan = load_plan(str(body["plan_path"]))
            else:
                raise ValidationError("diagnose request needs plan or plan_path")
            report = validate_plan(plan, engine.registry)
            if not report.ok:
                from .errors import PlanInvalid

                raise PlanInvalid(report.findings)
            decider = str(body.get("decider", "moe"))
            run_dir = runs_root / case.case_id
            _, payload = engine.diagnose_case(case, plan, decider, run_dir)
            return Response(content=payload, media_type="application/json")
        except ValidationError as exc:
            return _bad_request(exc)
        except EngineError as exc:
            return _internal(exc)
        finally:
            logger.info(
                "POST /v1/diagnose case_id=%s latency_ms=%.1f",
                case_id,
                1000 * (time.perf_counter() - started),
            )

    return app
