"""Core geometric types: point clouds, planes, rigid transforms, NN index.

All coordinates are in millimeters. Types are immutable after construction
and all operations are pure, so everything here is safe to share across
threads; ``NeighborIndex`` is read-only after build.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateCloud, EmptyCloud

Points3: TypeAlias = NDArray[np.float64]  # shape (N, 3)
Points2: TypeAlias = NDArray[np.float64]  # shape (N, 2)
Mat3: TypeAlias = NDArray[np.float64]     # shape (3, 3)
Vec3: TypeAlias = NDArray[np.float64]     # shape (3,)

ORTHONORMALITY_TOL = 1e-9


def _as_points(points, dim: int) -> NDArray[np.float64]:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == dim:
        arr = arr.reshape(1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected (N, {dim}) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points, optionally with per-point camera visibility.

    Point order is stable: indices returned by any operation remain valid
    handles into ``points``. ``visibility[i]`` lists the camera indices from
    which point i was observed; it is empty metadata for purely geometric
    pipelines.
    """

    points: Points3
    visibility: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        pts = _as_points(self.points, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.visibility is not None:
            vis = tuple(tuple(int(c) for c in v) for v in self.visibility)
            if len(vis) != len(pts):
                raise ValueError("visibility must have one entry per point")
            object.__setattr__(self, "visibility", vis)

    def __len__(self) -> int:
        return self.points.shape[0]

    def require_nonempty(self) -> None:
        if len(self) == 0:
            raise EmptyCloud("operation requires a non-empty cloud")


@dataclass(frozen=True)
class Plane:
    """A fitting plane: centroid, unit normal, and a right-handed in-plane basis.

    ``basis_u x basis_v == normal`` and all three vectors are mutually
    orthonormal to 1e-9.
    """

    centroid: Vec3
    normal: Vec3
    basis_u: Vec3
    basis_v: Vec3

    def __post_init__(self):
        for name in ("centroid", "normal", "basis_u", "basis_v"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        frame = np.stack([self.basis_u, self.basis_v, self.normal])
        if not np.allclose(frame @ frame.T, np.eye(3), atol=ORTHONORMALITY_TOL):
            raise ValueError("plane frame is not orthonormal")
        if not np.allclose(np.cross(self.basis_u, self.basis_v), self.normal,
                           atol=ORTHONORMALITY_TOL):
            raise ValueError("plane frame is not right-handed")

    def project(self, points: Points3) -> Points2:
        """In-plane (u, v) coordinates of each point."""
        d = _as_points(points, 3) - self.centroid
        return np.column_stack([d @ self.basis_u, d @ self.basis_v])

    def lift(self, points2d: Points2) -> Points3:
        """Map in-plane (u, v) coordinates back to 3D points on the plane."""
        p = _as_points(points2d, 2)
        return self.centroid + np.outer(p[:, 0], self.basis_u) + np.outer(p[:, 1], self.basis_v)

    def signed_distance(self, points: Points3) -> NDArray[np.float64]:
        return (_as_points(points, 3) - self.centroid) @ self.normal


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion p -> R @ p + t with R in SO(3)."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has negative determinant (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: Points3) -> Points3:
        return _as_points(points, 3) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self @ other)(p) == self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def rotation_angle_deg(self) -> float:
        """Magnitude of the rotation in degrees."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

    def to_dict(self) -> dict:
        return {
            "rotation_row_major": [float(x) for x in self.rotation.reshape(-1)],
            "translation_mm": [float(x) for x in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        r = np.asarray(d["rotation_row_major"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(d["translation_mm"], dtype=np.float64)
        return RigidTransform(r, t)


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Transform every point; visibility metadata is carried over unchanged."""
    return PointCloud(t.apply(cloud.points), visibility=cloud.visibility)


def fit_plane_pca(cloud: PointCloud) -> Plane:
    """Least-squares plane through the centroid of a cloud.

    The normal is the covariance eigenvector of smallest eigenvalue, with its
    sign canonicalized so the largest-magnitude component is positive.

    Raises DegenerateCloud when fewer than 3 points are given or the points
    are (numerically) collinear.
    """
    cloud.require_nonempty()
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateCloud(f"plane fit needs >= 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    # Collinear (or fully coincident) points: covariance rank < 2.
    if eigvals[1] <= max(eigvals[2], 1e-30) * 1e-12:
        raise DegenerateCloud("points are collinear; plane is underdetermined")
    normal = eigvecs[:, 0]
    k = int(np.argmax(np.abs(normal)))
    if normal[k] < 0:
        normal = -normal
    # In-plane basis: project the world axis least aligned with the normal.
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(normal)))] = 1.0
    u = axis - (axis @ normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return Plane(centroid=centroid, normal=normal, basis_u=u, basis_v=v)


def project_to_plane(cloud: PointCloud, plane: Plane) -> Points2:
    """Index-aligned (u, v) coordinates of every cloud point."""
    return plane.project(cloud.points)


class NeighborIndex:
    """Exact nearest-neighbor index over a point cloud.

    Results match a brute-force scan exactly; ties are broken by the lowest
    point index. ``query_count`` tallies how many query points have been
    answered (diagnostics for query-budget assertions).
    """

    def __init__(self, cloud: PointCloud):
        cloud.require_nonempty()
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)
        self.query_count = 0

    def __len__(self) -> int:
        return len(self.cloud)

    def nearest(self, query) -> tuple[int, float]:
        """Nearest indexed point to a single query point."""
        idx, dist = self.nearest_many(np.asarray(query, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def nearest_many(self, queries: Points3) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Vectorized nearest neighbor for a batch of query points."""
        q = _as_points(queries, 3)
        self.query_count += len(q)
        if len(self.cloud) == 1:
            best = np.zeros(len(q), dtype=np.int64)
        else:
            dists, idxs = self._tree.query(q, k=2)
            best = idxs[:, 0].astype(np.int64)
            # Exact tie with the runner-up: re-resolve by lowest index among
            # all points at the minimal distance.
            maybe_tied = np.nonzero(dists[:, 1] <= dists[:, 0] * (1 + 1e-12) + 1e-300)[0]
            for i in maybe_tied:
                cand = self._tree.query_ball_point(q[i], dists[i, 0] * (1 + 1e-12) + 1e-300)
                cd = np.sqrt(((self.cloud.points[cand] - q[i]) ** 2).sum(axis=1))
                dmin = cd.min()
                best[i] = min(int(c) for c, d in zip(cand, cd) if d == dmin)
        # Distances recomputed directly so results match a brute-force scan
        # bit for bit, not just to kd-tree rounding.
        best_d = np.sqrt(((self.cloud.points[best] - q) ** 2).sum(axis=1))
        return best, best_d

    def within_radius(self, query, radius: float) -> list[int]:
        return sorted(self._tree.query_ball_point(np.asarray(query, dtype=np.float64), radius))

    def knn(self, queries: Points3, k: int) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """k nearest neighbors per query point (indices, distances)."""
        q = _as_points(queries, 3)
        self.query_count += len(q)
        dists, idxs = self._tree.query(q, k=k)
        if k == 1:
            dists = dists[:, None]
            idxs = idxs[:, None]
        return idxs.astype(np.int64), dists


def nearest_neighbor(index: NeighborIndex, query) -> tuple[int, float]:
    """Module-level convenience wrapper over NeighborIndex.nearest."""
    return index.nearest(query)
