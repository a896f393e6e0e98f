"""Pydantic request/response models for the registration service.

Requests reference files by server-local path: the service is a job runner
that shares a filesystem with its clients (the CLI runs it in-process by
default).
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field

from ..pipeline import PipelineConfig


class ConfigModel(BaseModel):
    """Wire form of PipelineConfig; every field optional, defaults apply."""

    n_samples: Optional[int] = None
    alpha_mm: Optional[float] = None
    boundary_k: Optional[int] = None
    boundary_gap_threshold: Optional[float] = None
    pixel_threshold: Optional[float] = None
    max_iterations: Optional[int] = None
    convergence_tol: Optional[float] = None
    correspondence_reject_distance: Optional[float] = None
    min_correspondences: Optional[int] = None
    completeness_threshold: Optional[float] = None
    jobs: Optional[int] = None
    seed: Optional[int] = None

    def to_config(self, base: PipelineConfig | None = None) -> PipelineConfig:
        base = base or PipelineConfig()
        return base.override(**self.model_dump())


class TransformModel(BaseModel):
    rotation_row_major: list[float] = Field(min_length=9, max_length=9)
    translation_mm: list[float] = Field(min_length=3, max_length=3)


class GenSynthRequest(BaseModel):
    out_dir: str
    n: int = Field(ge=1, le=20)
    seed: int = 0
    adversarial: bool = False
    noise_sigma: Optional[float] = None
    sample_spacing: Optional[float] = None


class GenSynthResponse(BaseModel):
    out_dir: str
    front_dir: str
    back_dir: str
    gt_dir: str
    truth_json: str
    n: int
    seed: int


class ExtractContourRequest(BaseModel):
    ply_path: str
    out_path: Optional[str] = None
    config: ConfigModel = ConfigModel()


class MatchRequest(BaseModel):
    front_dir: str
    back_dir: str
    config: ConfigModel = ConfigModel()


class ExtractBoundaryRequest(BaseModel):
    ply_path: str
    camera_json: Optional[str] = None
    out_ply: Optional[str] = None
    out_json: Optional[str] = None
    config: ConfigModel = ConfigModel()


class RegisterRequest(BaseModel):
    front_ply: str
    back_ply: str
    init_transform: Optional[TransformModel] = None
    init_transform_json: Optional[str] = None
    front_boundary_json: Optional[str] = None
    back_boundary_json: Optional[str] = None
    out_prefix: Optional[str] = None
    config: ConfigModel = ConfigModel()


class EvaluateRequest(BaseModel):
    recon_ply: str
    gt_ply: str
    align: bool = False
    align_init_json: Optional[str] = None
    out_csv: Optional[str] = None
    config: ConfigModel = ConfigModel()


class PipelineRequest(BaseModel):
    front_dir: str
    back_dir: str
    out_dir: str
    truth_json: Optional[str] = None
    config: ConfigModel = ConfigModel()


class JsonResponse(BaseModel):
    """Free-form stage output; concrete keys are documented per endpoint."""

    result: dict[str, Any]


class ErrorResponse(BaseModel):
    error: str
    detail: str
