"""FastAPI application exposing the experiment operations.

Endpoints mirror the CLI subcommands one to one; runs execute
synchronously (desk-scale configs finish in seconds).
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from . import ops
from .schemas import (
    AblateRequest,
    AblateResponse,
    EvalRequest,
    EvalResponse,
    GenDataRequest,
    GenDataResponse,
    HealthResponse,
    SummaryRequest,
    SummaryResponse,
    TrainRequest,
    TrainResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="codistill",
        version=__version__,
        description="Co-distillation experiments: dataset generation, training, ablation, evaluation.",
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/datasets/generate", response_model=GenDataResponse)
    def gen_data(req: GenDataRequest) -> GenDataResponse:
        return _run(ops.gen_data, req)

    @app.post("/runs/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        return _run(ops.train, req)

    @app.post("/runs/ablate", response_model=AblateResponse)
    def ablate(req: AblateRequest) -> AblateResponse:
        return _run(ops.ablate, req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        return _run(ops.evaluate, req)

    @app.post("/runs/report", response_model=SummaryResponse)
    def report(req: SummaryRequest) -> SummaryResponse:
        return _run(ops.summarize, req)

    return app


def _run(fn, req):
    try:
        return fn(req)
    except (ValueError, FileNotFoundError) as e:
        raise HTTPException(status_code=400, detail=str(e)) from e


app = create_app()
