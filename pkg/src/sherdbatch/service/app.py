"""FastAPI application exposing the pipeline stages as endpoints.

Domain failures map to HTTP 400 with the exception class name; malformed
requests are FastAPI's usual 422.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import SherdbatchError
from ..geometry import RigidTransform
from ..pipeline import (do_evaluate, do_extract_boundary, do_extract_contour,
                        do_gen_synth, do_match, do_register, run_pipeline)
from ..synth import SynthPreset
from .schemas import (EvaluateRequest, ExtractBoundaryRequest,
                      ExtractContourRequest, GenSynthRequest, GenSynthResponse,
                      JsonResponse, MatchRequest, PipelineRequest,
                      RegisterRequest)


def create_app() -> FastAPI:
    app = FastAPI(title="sherdbatch", version=__version__,
                  description="Front/back fragment scan matching and registration")

    @app.exception_handler(SherdbatchError)
    async def domain_error(request: Request, exc: SherdbatchError):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400,
                            content={"error": "ValueError", "detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=400,
                            content={"error": "FileNotFoundError", "detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/gen-synth", response_model=GenSynthResponse)
    def gen_synth(req: GenSynthRequest):
        preset = SynthPreset()
        overrides = {}
        if req.noise_sigma is not None:
            overrides["noise_sigma"] = req.noise_sigma
        if req.sample_spacing is not None:
            overrides["sample_spacing"] = req.sample_spacing
        if overrides:
            from dataclasses import replace
            preset = replace(preset, **overrides)
        return do_gen_synth(req.out_dir, req.n, req.seed, preset, req.adversarial)

    @app.post("/extract-contour", response_model=JsonResponse)
    def extract_contour(req: ExtractContourRequest):
        doc = do_extract_contour(req.ply_path, req.config.to_config(), req.out_path)
        return {"result": doc}

    @app.post("/match", response_model=JsonResponse)
    def match(req: MatchRequest):
        return {"result": do_match(req.front_dir, req.back_dir, req.config.to_config())}

    @app.post("/extract-boundary", response_model=JsonResponse)
    def extract_boundary(req: ExtractBoundaryRequest):
        doc = do_extract_boundary(req.ply_path, req.config.to_config(),
                                  camera_json=req.camera_json,
                                  out_ply=req.out_ply, out_json=req.out_json)
        return {"result": doc}

    @app.post("/register", response_model=JsonResponse)
    def register(req: RegisterRequest):
        init = None
        if req.init_transform is not None:
            init = RigidTransform.from_dict(req.init_transform.model_dump())
        elif req.init_transform_json is not None:
            init = RigidTransform.from_dict(
                json.loads(Path(req.init_transform_json).read_text()))
        doc = do_register(req.front_ply, req.back_ply, req.config.to_config(),
                          init=init,
                          front_boundary_json=req.front_boundary_json,
                          back_boundary_json=req.back_boundary_json,
                          out_prefix=req.out_prefix)
        return {"result": doc}

    @app.post("/evaluate", response_model=JsonResponse)
    def evaluate_endpoint(req: EvaluateRequest):
        doc = do_evaluate(req.recon_ply, req.gt_ply, req.config.to_config(),
                          align=req.align, align_init_json=req.align_init_json,
                          out_csv=req.out_csv)
        return {"result": doc}

    @app.post("/pipeline", response_model=JsonResponse)
    def pipeline_endpoint(req: PipelineRequest):
        manifest = run_pipeline(req.front_dir, req.back_dir, req.out_dir,
                                req.config.to_config(), req.truth_json)
        return {"result": manifest}

    return app


app = create_app()
