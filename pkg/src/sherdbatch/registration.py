"""Fine registration of paired partial scans.

The main entry point is bilateral boundary ICP: only the boundary points of
each scan search for closest points in the *other full scan*, in both
directions at once, so the narrow shared strip between a front and back
scan is enough to lock the pose. A trimmed point-to-point ICP is included
as the comparison baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundary import BoundarySet
from .errors import (DegenerateCorrespondence, InsufficientCorrespondences,
                     NonFiniteObjective)
from .geometry import NeighborIndex, PointCloud, RigidTransform


def rigid_fit_svd(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping source[i] onto target[i].

    Centroid subtraction followed by SVD of the cross-covariance; if the
    raw solution is a reflection, the smallest-singular direction is flipped
    so the result is a proper rotation.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("source and target must be matching (N, 3) arrays")
    if len(src) < 3:
        raise ValueError(f"rigid fit needs >= 3 pairs, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(s[0], 1e-300) * 1e-12:
        raise DegenerateCorrespondence("paired points are collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def pose_error(estimate: RigidTransform, truth: RigidTransform,
               reference=None) -> tuple[float, float]:
    """(rotation error in degrees, translation error in mm).

    The translation error is the displacement of ``reference`` (origin by
    default) under the two transforms.
    """
    rel = estimate.compose(truth.inverse())
    ref = np.zeros(3) if reference is None else np.asarray(reference, dtype=np.float64)
    dt = estimate.apply(ref.reshape(1, 3)) - truth.apply(ref.reshape(1, 3))
    return rel.rotation_angle_deg(), float(np.linalg.norm(dt))


@dataclass(frozen=True, slots=True)
class BBICPConfig:
    """Loop controls shared by both ICP variants.

    ``correspondence_reject_distance`` drops pairs farther than this (mm)
    from the current iteration; None derives 5x the median pair distance
    (recomputed once after the first iteration), math.inf disables
    rejection entirely.
    """

    max_iterations: int = 100
    convergence_tol: float = 1e-6
    correspondence_reject_distance: float | None = None
    min_correspondences: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if self.correspondence_reject_distance is not None \
                and not self.correspondence_reject_distance > 0:
            raise ValueError("correspondence_reject_distance must be > 0")
        if self.min_correspondences < 3:
            raise ValueError("min_correspondences must be >= 3")


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of an ICP run.

    ``transform`` maps the moving cloud (the back scan, or the trimmed-ICP
    source) into the fixed cloud's frame, composed with the initial guess.
    ``objective_trace[k]`` is the summed squared correspondence distance
    after the k-th update. ``nn_query_count`` tallies nearest-neighbor
    query points issued over the whole run.
    """

    transform: RigidTransform
    objective_trace: tuple[float, ...]
    iterations_run: int
    converged: bool
    final_rms: float
    final_pair_count: int
    nn_query_count: int

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "objective_trace": list(self.objective_trace),
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "final_rms_mm": self.final_rms,
            "final_pair_count": self.final_pair_count,
            "nn_query_count": self.nn_query_count,
        }


class _IcpLoop:
    """Shared iteration scaffold: rejection policy, SVD update, convergence."""

    def __init__(self, config: BBICPConfig):
        self.config = config
        self.reject = config.correspondence_reject_distance
        self._auto_reject = self.reject is None
        self.trace: list[float] = []
        self.prev_obj: float | None = None
        self.final_rms = 0.0
        self.final_count = 0

    def threshold(self, iteration: int, distances: np.ndarray) -> float:
        if self._auto_reject and iteration <= 2:
            # Median scale of the current pair set; settled after iteration 2.
            # The floor keeps already-perfect alignments from rejecting
            # everything when the median is numerically zero.
            self.reject = max(5.0 * float(np.median(distances)), 1e-9)
        return self.reject

    def step(self, src: np.ndarray, dst: np.ndarray) -> RigidTransform:
        """Solve the update for surviving pairs and record the objective."""
        if len(src) < self.config.min_correspondences:
            raise InsufficientCorrespondences(
                f"only {len(src)} pairs survive, need {self.config.min_correspondences}")
        update = rigid_fit_svd(src, dst)
        resid = dst - update.apply(src)
        obj = float(np.sum(resid * resid))
        if not math.isfinite(obj):
            raise NonFiniteObjective("registration objective is not finite")
        self.trace.append(obj)
        self.final_rms = math.sqrt(obj / len(src))
        self.final_count = len(src)
        return update

    def converged(self) -> bool:
        if self.final_rms <= 1e-12:  # perfect alignment, nothing left to move
            return True
        if self.prev_obj is None:
            self.prev_obj = self.trace[-1]
            return False
        cur = self.trace[-1]
        done = abs(self.prev_obj - cur) <= self.config.convergence_tol * max(self.prev_obj, 1e-30)
        self.prev_obj = cur
        return done


def bbicp(front: PointCloud, back: PointCloud,
          front_boundary: BoundarySet, back_boundary: BoundarySet,
          init: RigidTransform, config: BBICPConfig = BBICPConfig()) -> RegistrationResult:
    """Bilateral boundary ICP: register the back scan onto the front scan.

    Each iteration builds two correspondence sets: every front boundary
    point to its nearest point in the (transformed) back cloud, and every
    transformed back boundary point to its nearest point in the front
    cloud. Pairs beyond the rejection distance are dropped, and the
    closed-form rigid update minimizing the remaining summed squared
    distances is applied. Only boundary points ever issue nearest-neighbor
    queries, against indexes built once over the two static clouds.
    """
    if len(front_boundary) == 0 or len(back_boundary) == 0:
        raise InsufficientCorrespondences("both boundary sets must be non-empty")
    front_index = NeighborIndex(front)
    back_index = NeighborIndex(back)
    bp = front.points[front_boundary.indices]
    bq = back.points[back_boundary.indices]

    loop = _IcpLoop(config)
    transform = init
    iterations = 0
    converged = False
    for iteration in range(1, config.max_iterations + 1):
        iterations = iteration
        inv = transform.inverse()
        # Nearest in the transformed back cloud == nearest in the static
        # back cloud of the inverse-transformed query (rigid isometry).
        idx1, d1 = back_index.nearest_many(inv.apply(bp))
        bq_now = transform.apply(bq)
        idx2, d2 = front_index.nearest_many(bq_now)

        thr = loop.threshold(iteration, np.concatenate([d1, d2]))
        keep1 = d1 <= thr
        keep2 = d2 <= thr
        src = np.vstack([transform.apply(back.points[idx1[keep1]]), bq_now[keep2]])
        dst = np.vstack([bp[keep1], front.points[idx2[keep2]]])

        update = loop.step(src, dst)
        transform = update.compose(transform)
        if loop.converged():
            converged = True
            break

    return RegistrationResult(
        transform=transform,
        objective_trace=tuple(loop.trace),
        iterations_run=iterations,
        converged=converged,
        final_rms=loop.final_rms,
        final_pair_count=loop.final_count,
        nn_query_count=front_index.query_count + back_index.query_count,
    )


def trimmed_icp(source: PointCloud, target: PointCloud, init: RigidTransform,
                trim_fraction: float,
                config: BBICPConfig = BBICPConfig()) -> RegistrationResult:
    """Point-to-point ICP over all source points, keeping only the
    trim_fraction of closest pairs each iteration."""
    if not 0.0 < trim_fraction <= 1.0:
        raise ValueError(f"trim_fraction must be in (0, 1], got {trim_fraction}")
    source.require_nonempty()
    target.require_nonempty()
    target_index = NeighborIndex(target)

    loop = _IcpLoop(config)
    transform = init
    iterations = 0
    converged = False
    for iteration in range(1, config.max_iterations + 1):
        iterations = iteration
        src_now = transform.apply(source.points)
        idx, d = target_index.nearest_many(src_now)
        keep_count = max(int(math.ceil(trim_fraction * len(d))), 3)
        order = np.argsort(d, kind="stable")[:keep_count]

        update = loop.step(src_now[order], target.points[idx[order]])
        transform = update.compose(transform)
        if loop.converged():
            converged = True
            break

    return RegistrationResult(
        transform=transform,
        objective_trace=tuple(loop.trace),
        iterations_run=iterations,
        converged=converged,
        final_rms=loop.final_rms,
        final_pair_count=loop.final_count,
        nn_query_count=target_index.query_count,
    )
