"""Reconstruction quality metrics against a ground-truth model.

All four numbers derive from nearest-neighbor distances between the two
point sets: accuracy is the 90th percentile of reconstruction-to-truth
distances, completeness the share of truth points covered within a
threshold, MAE/SD the mean and standard deviation of the reconstruction
errors. The caller is responsible for aligning the clouds first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NeighborIndex, PointCloud, RigidTransform
from .registration import BBICPConfig, trimmed_icp

DEFAULT_COMPLETENESS_THRESHOLD = 0.5  # mm
DEFAULT_ACCURACY_PERCENTILE = 90.0


@dataclass(frozen=True, slots=True)
class EvalReport:
    """One cloud-vs-truth evaluation."""

    accuracy_mm: float
    completeness_pct: float
    mae_mm: float
    sd_mm: float
    n_recon: int
    n_gt: int
    completeness_threshold_mm: float

    def to_dict(self) -> dict:
        return {
            "accuracy_mm": self.accuracy_mm,
            "completeness_pct": self.completeness_pct,
            "mae_mm": self.mae_mm,
            "sd_mm": self.sd_mm,
            "n_recon": self.n_recon,
            "n_gt": self.n_gt,
            "completeness_threshold_mm": self.completeness_threshold_mm,
        }

    def csv_row(self, label: str) -> str:
        return (f"{label},{self.accuracy_mm:.6f},{self.completeness_pct:.4f},"
                f"{self.mae_mm:.6f},{self.sd_mm:.6f}")


def evaluate(recon: PointCloud, gt: PointCloud,
             completeness_threshold: float = DEFAULT_COMPLETENESS_THRESHOLD,
             accuracy_percentile: float = DEFAULT_ACCURACY_PERCENTILE) -> EvalReport:
    """Score an (already aligned) reconstruction against its ground truth.

    Distances are point-to-nearest-point in both directions: accuracy, MAE
    and SD summarize reconstruction-to-truth distances; completeness is the
    percentage of truth points with a reconstruction point closer than the
    threshold.
    """
    recon.require_nonempty()
    gt.require_nonempty()
    d_recon = NeighborIndex(gt).nearest_many(recon.points)[1]
    d_gt = NeighborIndex(recon).nearest_many(gt.points)[1]
    return EvalReport(
        accuracy_mm=float(np.percentile(d_recon, accuracy_percentile)),
        completeness_pct=float(100.0 * np.mean(d_gt < completeness_threshold)),
        mae_mm=float(np.mean(d_recon)),
        sd_mm=float(np.std(d_recon)),
        n_recon=len(recon),
        n_gt=len(gt),
        completeness_threshold_mm=completeness_threshold,
    )


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Per-batch aggregate: the plain mean of each metric."""
    if not reports:
        raise ValueError("cannot aggregate zero reports")
    return EvalReport(
        accuracy_mm=float(np.mean([r.accuracy_mm for r in reports])),
        completeness_pct=float(np.mean([r.completeness_pct for r in reports])),
        mae_mm=float(np.mean([r.mae_mm for r in reports])),
        sd_mm=float(np.mean([r.sd_mm for r in reports])),
        n_recon=sum(r.n_recon for r in reports),
        n_gt=sum(r.n_gt for r in reports),
        completeness_threshold_mm=reports[0].completeness_threshold_mm,
    )


def align_to_gt(recon: PointCloud, gt: PointCloud,
                init: RigidTransform | None = None,
                trim_fraction: float = 0.8) -> tuple[PointCloud, RigidTransform]:
    """Trimmed-ICP alignment of a reconstruction onto its ground truth,
    used before evaluate() when the clouds are not already in one frame."""
    result = trimmed_icp(recon, gt, init or RigidTransform.identity(),
                         trim_fraction, BBICPConfig())
    return PointCloud(result.transform.apply(recon.points)), result.transform
