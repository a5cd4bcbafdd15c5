"""FastAPI service wrapping the fitting pipeline.

Errors are reported with a structured detail body so clients can tell bad
input (kind "validation") from numerical failure (kind "numerical"); both
use HTTP 422, matching FastAPI's own request-validation status.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..errors import DataValidationError, NumericalError
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="smoothcox", version=__version__)

    @app.exception_handler(DataValidationError)
    async def _validation_error(request: Request, exc: DataValidationError):
        return JSONResponse(
            status_code=422, content={"detail": {"kind": "validation", "message": str(exc)}}
        )

    @app.exception_handler(NumericalError)
    async def _numerical_error(request: Request, exc: NumericalError):
        return JSONResponse(
            status_code=422, content={"detail": {"kind": "numerical", "message": str(exc)}}
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/version", response_model=schemas.VersionResponse)
    def version():
        return pipeline.version_info()

    @app.post("/v1/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest):
        return pipeline.run_ingest(req.csv_text)

    @app.post("/v1/km", response_model=schemas.KMResponse)
    def km(req: schemas.KMRequest):
        return pipeline.run_km(req.csv_text, group=req.group)

    @app.post("/v1/fit", response_model=schemas.FitResponse)
    def fit(req: schemas.FitRequest):
        return pipeline.run_fit(req.csv_text, req.model_spec, k_default=req.k_default)

    @app.post("/v1/fit/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        labels = req.labels or [f"model_{i + 1}" for i in range(len(req.model_specs))]
        if len(labels) != len(req.model_specs):
            raise DataValidationError("labels must match model_specs in length")
        return pipeline.run_compare(
            req.csv_text, list(zip(labels, req.model_specs)), k_default=req.k_default
        )

    @app.post("/v1/select", response_model=schemas.SelectResponse)
    def select(req: schemas.SelectRequest):
        return pipeline.run_select(
            req.csv_text,
            req.model_spec,
            seed=req.seed,
            k_default=req.k_default,
            m_forward=req.m_forward,
        )

    @app.post("/v1/threshold", response_model=schemas.ThresholdResponse)
    def threshold(req: schemas.ThresholdRequest):
        return pipeline.run_threshold(
            req.csv_text,
            req.model_spec,
            term=req.term,
            seed=req.seed,
            b_samples=req.b_samples,
            k_default=req.k_default,
            restrict_positive_slope=req.restrict_positive_slope,
        )

    @app.post("/v1/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        return pipeline.run_simulate(req.sim_spec)

    return app


app = create_app()
