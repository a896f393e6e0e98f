"""3D boundary point extraction for partial scans.

Two stages mirror the acquisition pipeline: a cheap mask-reprojection
filter narrows the cloud down to candidate points near the segmented
silhouette in each camera, then the angular-gap criterion keeps the points
whose tangent-plane neighborhood leaves a wide empty sector. Scans without
camera metadata run the second stage on every point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import NoViews, TooFewNeighbors
from .geometry import NeighborIndex, PointCloud, RigidTransform

DEFAULT_NEIGHBORS = 16
DEFAULT_GAP_THRESHOLD = 2.0 * np.pi / 3.0
DEFAULT_PIXEL_THRESHOLD = 3.0


@dataclass(frozen=True)
class BoundarySet:
    """Indices of the boundary points of a cloud (unique, ascending)."""

    indices: NDArray[np.int64]

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(idx) and idx[0] < 0:
            raise ValueError("boundary indices must be non-negative")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {"indices": [int(i) for i in self.indices]}

    @staticmethod
    def from_dict(d: dict) -> "BoundarySet":
        return BoundarySet(np.asarray(d["indices"], dtype=np.int64))


def mask_boundary_pixels(mask: np.ndarray) -> NDArray[np.float64]:
    """(u, v) coordinates of mask pixels adjacent to background or the
    image border. u is the column index, v the row index."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] &
                padded[1:-1, :-2] & padded[1:-1, 2:])
    rows, cols = np.nonzero(m & ~interior)
    return np.column_stack([cols, rows]).astype(np.float64)


@dataclass(frozen=True)
class CameraView:
    """A calibrated camera with the fragment's segmentation mask.

    ``pose`` maps world to camera coordinates; ``mask`` is indexed
    [row, col] with nonzero marking the fragment. ``mask_contour`` holds
    the (u, v) boundary pixels and is derived from the mask when omitted.
    """

    intrinsics: NDArray[np.float64]
    pose: RigidTransform
    mask: np.ndarray
    mask_contour: NDArray[np.float64] | None = None

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        k.setflags(write=False)
        object.__setattr__(self, "intrinsics", k)
        mask = np.asarray(self.mask).astype(bool)
        if not mask.any():
            raise ValueError("mask is empty")
        object.__setattr__(self, "mask", mask)
        contour = self.mask_contour
        if contour is None:
            contour = mask_boundary_pixels(mask)
        contour = np.asarray(contour, dtype=np.float64).reshape(-1, 2)
        contour.setflags(write=False)
        object.__setattr__(self, "mask_contour", contour)

    def project(self, points: np.ndarray) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Pixel (u, v) coordinates and camera-frame depth of each point."""
        cam = self.pose.apply(points)
        z = cam[:, 2]
        homo = cam @ self.intrinsics.T
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = homo[:, :2] / homo[:, 2:3]
        return uv, z


def mask_candidate_filter(cloud: PointCloud, views: list[CameraView],
                          pixel_threshold: float = DEFAULT_PIXEL_THRESHOLD) -> NDArray[np.int64]:
    """Points whose projection lies near the mask silhouette in every view
    that sees them.

    A point qualifies when its pixel distance to the mask contour is below
    ``pixel_threshold`` in all views of its visibility list; points seen by
    no view are excluded.
    """
    if not views:
        raise NoViews("mask filtering requires at least one camera view")
    cloud.require_nonempty()
    n = len(cloud)
    visibility = cloud.visibility or tuple(() for _ in range(n))

    per_view: list[list[int]] = [[] for _ in views]
    for point_idx, cams in enumerate(visibility):
        for cam in cams:
            if not 0 <= cam < len(views):
                raise ValueError(f"point {point_idx} references unknown view {cam}")
            per_view[cam].append(point_idx)

    seen = np.zeros(n, dtype=bool)
    near_everywhere = np.ones(n, dtype=bool)
    for view, members in zip(views, per_view):
        if not members:
            continue
        members = np.asarray(members, dtype=np.int64)
        seen[members] = True
        uv, z = view.project(cloud.points[members])
        contour_tree = cKDTree(view.mask_contour)
        dist, _ = contour_tree.query(uv)
        dist[z <= 0] = np.inf  # behind the camera: cannot be near the silhouette
        near_everywhere[members] &= dist < pixel_threshold

    return np.nonzero(seen & near_everywhere)[0].astype(np.int64)


def extract_boundary(cloud: PointCloud, candidates=None,
                     k: int = DEFAULT_NEIGHBORS,
                     gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> BoundarySet:
    """Angular-gap boundary test over a candidate set.

    For each candidate, its k nearest neighbors are projected onto the
    local PCA tangent plane and sorted by polar angle around the point; the
    point is a boundary point iff the widest angular gap between successive
    neighbors exceeds ``gap_threshold``. With ``candidates=None`` every
    point is tested (geometric-only mode for scans without camera data).
    """
    cloud.require_nonempty()
    if k < 4:
        raise ValueError(f"k must be >= 4, got {k}")
    if len(cloud) < k + 1:
        raise TooFewNeighbors(f"cloud has {len(cloud)} points, need > {k}")
    if candidates is None:
        cand = np.arange(len(cloud), dtype=np.int64)
    else:
        cand = np.unique(np.asarray(candidates, dtype=np.int64))
        if len(cand) == 0:
            raise ValueError("candidate set is empty")
        if cand[0] < 0 or cand[-1] >= len(cloud):
            raise ValueError("candidate index out of range")

    index = NeighborIndex(cloud)
    pts = cloud.points
    centers = pts[cand]
    idx, _ = index.knn(centers, k + 1)
    # Drop each point itself from its own neighborhood (first column after
    # sorting by distance; guard against duplicate coordinates).
    neighbors = np.empty((len(cand), k), dtype=np.int64)
    for row, (point_idx, row_idx) in enumerate(zip(cand, idx)):
        others = row_idx[row_idx != point_idx]
        if len(others) < k:
            others = np.concatenate([others, row_idx[row_idx == point_idx][1:]])
        neighbors[row] = others[:k]

    nb = pts[neighbors]                      # (m, k, 3)
    local = np.concatenate([nb, centers[:, None, :]], axis=1)
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered)
    _, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, :, 0]                # smallest-eigenvalue direction

    # Right-handed tangent basis per point.
    axis_pick = np.argmin(np.abs(normal), axis=1)
    axis = np.zeros_like(normal)
    axis[np.arange(len(cand)), axis_pick] = 1.0
    u = axis - np.sum(axis * normal, axis=1, keepdims=True) * normal
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normal, u)

    rel = nb - centers[:, None, :]
    ang = np.arctan2(np.einsum("mkj,mj->mk", rel, v),
                     np.einsum("mkj,mj->mk", rel, u))
    ang.sort(axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = 2.0 * np.pi - (ang[:, -1] - ang[:, 0])
    max_gap = np.maximum(gaps.max(axis=1) if k > 1 else 0.0, wrap)

    return BoundarySet(cand[max_gap > gap_threshold])
