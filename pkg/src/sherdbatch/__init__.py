"""Batch matching and registration of front/back fragment scans."""

__version__ = "0.1.0"

from .boundary import BoundarySet, CameraView, extract_boundary, mask_candidate_filter
from .contour import (Contour, Polygon2, ShapeDescriptor, alpha_shape_contour,
                      descriptor, descriptor_with_start, resample_uniform)
from .geometry import (NeighborIndex, Plane, PointCloud, RigidTransform,
                       apply_transform, fit_plane_pca, nearest_neighbor,
                       project_to_plane)
from .matching import (BatchAssignment, DescriptorDistanceResult,
                       descriptor_distance, initial_alignment, match_batches)
from .metrics import EvalReport, evaluate
from .pipeline import PipelineConfig, run_pipeline
from .ply_io import read_ply, write_ply
from .registration import (BBICPConfig, RegistrationResult, bbicp, pose_error,
                           rigid_fit_svd, trimmed_icp)
from .synth import FragmentSpec, GroundTruth, SynthPreset, generate_batch, generate_fragment

__all__ = [
    "BBICPConfig", "BatchAssignment", "BoundarySet", "CameraView", "Contour",
    "DescriptorDistanceResult", "EvalReport", "FragmentSpec", "GroundTruth",
    "NeighborIndex", "PipelineConfig", "Plane", "PointCloud",
    "Polygon2", "RegistrationResult", "RigidTransform", "ShapeDescriptor",
    "SynthPreset", "alpha_shape_contour", "apply_transform", "bbicp",
    "descriptor", "descriptor_distance", "descriptor_with_start", "evaluate",
    "extract_boundary", "fit_plane_pca", "generate_batch", "generate_fragment",
    "initial_alignment", "mask_candidate_filter", "match_batches",
    "nearest_neighbor", "pose_error", "project_to_plane", "read_ply",
    "resample_uniform", "rigid_fit_svd", "run_pipeline", "trimmed_icp",
    "write_ply",
]
