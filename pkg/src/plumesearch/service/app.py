"""HTTP service exposing the experiment harness.

The CLI talks to this app in process by default and to a remote
instance with --server; both paths exercise the same handlers.
Scenario configs arrive as text with their referenced files inlined,
get materialized into a temporary directory, and are parsed with the
same validation as local runs. Config violations map to HTTP 422,
runtime failures to 500.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import ScenarioConfig, parse_config
from ..errors import ConfigError, PlumesearchError
from ..harness import kld_study, run_batch, run_one
from .models import (
    BatchRequest,
    BatchResponse,
    KldRowModel,
    KldStudyRequest,
    KldStudyResponse,
    RunRequest,
    RunResponse,
    batch_response_from_report,
    run_response_from_result,
)


def _materialize(config_text: str, files: dict[str, str]) -> ScenarioConfig:
    with tempfile.TemporaryDirectory() as d:
        root = Path(d).resolve()
        for name, text in files.items():
            target = (root / name).resolve()
            if not target.is_relative_to(root):
                raise ConfigError([f"files.{name}: path escapes the request root"])
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
        return parse_config(config_text, base_dir=root)


def create_app() -> FastAPI:
    app = FastAPI(title="plumesearch", version=__version__)

    @app.exception_handler(ConfigError)
    async def config_error(request: Request, exc: ConfigError):
        return JSONResponse(
            status_code=422,
            content={"detail": str(exc), "violations": exc.violations},
        )

    @app.exception_handler(PlumesearchError)
    async def runtime_error(request: Request, exc: PlumesearchError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest) -> RunResponse:
        cfg = _materialize(req.config_text, req.files)
        result = run_one(cfg, req.seed, snapshot_every=req.snapshot_every)
        return run_response_from_result(result, free_cells=cfg.grid.free_cells())

    @app.post("/batch", response_model=BatchResponse)
    def batch(req: BatchRequest) -> BatchResponse:
        cfg = _materialize(req.config_text, req.files)
        return batch_response_from_report(
            run_batch(cfg, req.seeds, workers=req.workers)
        )

    @app.post("/kld-study", response_model=KldStudyResponse)
    def kld(req: KldStudyRequest) -> KldStudyResponse:
        cfg = _materialize(req.config_text, req.files)
        rows = kld_study(cfg, req.rho_values, req.seeds)
        return KldStudyResponse(rows=[KldRowModel(
            seed=r.seed, rho=r.rho, round_index=r.round_index,
            iteration=r.iteration, kld_nats=r.kld_nats,
            refined_s=r.refined_s, full_s=r.full_s,
            refined_sims=r.refined_sims, full_sims=r.full_sims,
        ) for r in rows])

    return app
