"""Front/back pairing of scan batches via contour descriptor distances.

The descriptor distance minimizes the L2 difference of accumulated
turning-angle vectors over every cyclic start vertex of the second contour,
and additionally over its reflection: flipping a fragment mirrors its
projected outline, so the back contour generically matches the front one
only after index reversal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .contour import ShapeDescriptor
from .errors import LengthMismatch, SizeMismatch
from .geometry import RigidTransform
from .registration import rigid_fit_svd

AMBIGUITY_MARGIN = 0.10  # runner-up within 10% of the chosen distance


@dataclass(frozen=True, slots=True)
class DescriptorDistanceResult:
    """Best cyclic/mirror alignment of two descriptors.

    ``best_shift`` is the start vertex of the second contour matched to
    vertex 0 of the first; ``mirrored`` records whether its vertex order
    was reversed first. Ties prefer smaller shifts and the unreflected
    orientation.
    """

    distance: float
    best_shift: int
    mirrored: bool


@dataclass(frozen=True)
class BatchAssignment:
    """A perfect front-to-back matching with per-pair diagnostics."""

    pairs: tuple[tuple[int, int, DescriptorDistanceResult], ...]
    ambiguity_flags: tuple[bool, ...]

    def permutation(self) -> np.ndarray:
        """back index assigned to each front index."""
        out = np.empty(len(self.pairs), dtype=np.int64)
        for front, back, _ in self.pairs:
            out[front] = back
        return out

    def to_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "front": front,
                    "back": back,
                    "distance": res.distance,
                    "best_shift": res.best_shift,
                    "mirrored": res.mirrored,
                    "ambiguous": bool(flag),
                }
                for (front, back, res), flag in zip(self.pairs, self.ambiguity_flags)
            ],
        }


def _shifted_theta_bars(raw: np.ndarray) -> np.ndarray:
    """Row s holds the accumulated angles of the contour restarted at s."""
    n = len(raw)
    rolled = raw[(np.arange(n)[:, None] + np.arange(n)[None, :]) % n]
    return np.cumsum(rolled, axis=1)


def descriptor_distance(theta_p: ShapeDescriptor,
                        theta_q: ShapeDescriptor) -> DescriptorDistanceResult:
    """Minimal L2 distance between two descriptors over all start shifts of
    the second contour and its reflection.

    The first descriptor stays anchored at its own start vertex, so the
    value is not symmetric in its arguments for dissimilar shapes.
    """
    if theta_p.n_samples != theta_q.n_samples:
        raise LengthMismatch(
            f"descriptors have {theta_p.n_samples} and {theta_q.n_samples} samples")
    raw_q = theta_q.raw_angles()
    n = len(raw_q)

    plain = _shifted_theta_bars(raw_q)
    plain[0] = theta_q.theta_bar  # shift 0 is the descriptor itself, verbatim
    # Reflection: reversing the vertex order (vertex 0 stays first) visits
    # the original turning angles backwards with their values preserved.
    mirrored = _shifted_theta_bars(raw_q[(-np.arange(n)) % n])

    d_plain = np.linalg.norm(plain - theta_p.theta_bar, axis=1)
    d_mirr = np.linalg.norm(mirrored - theta_p.theta_bar, axis=1)
    best_plain = int(np.argmin(d_plain))
    best_mirr = int(np.argmin(d_mirr))
    if d_mirr[best_mirr] < d_plain[best_plain]:
        return DescriptorDistanceResult(float(d_mirr[best_mirr]), best_mirr, True)
    return DescriptorDistanceResult(float(d_plain[best_plain]), best_plain, False)


def descriptor_distance_matrix(front: list[ShapeDescriptor],
                               back: list[ShapeDescriptor]) -> np.ndarray:
    """Object matrix of DescriptorDistanceResult, front rows x back columns."""
    out = np.empty((len(front), len(back)), dtype=object)
    for i, fp in enumerate(front):
        for j, bq in enumerate(back):
            out[i, j] = descriptor_distance(fp, bq)
    return out


def solve_assignment(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-total-cost perfect assignment of a square cost matrix."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
        raise ValueError("cost matrix must be square")
    return linear_sum_assignment(costs)


def match_batches(front: list[ShapeDescriptor],
                  back: list[ShapeDescriptor]) -> BatchAssignment:
    """Minimum-total-distance perfect matching of two descriptor batches.

    A pair is flagged ambiguous when the runner-up distance in its row lies
    within 10% of the chosen one, which happens for near-identical or
    rotationally symmetric outlines.
    """
    if len(front) != len(back) or len(front) == 0:
        raise SizeMismatch(
            f"batches must have equal non-zero sizes, got {len(front)} and {len(back)}")
    n = len(front)
    results = descriptor_distance_matrix(front, back)
    costs = np.array([[results[i, j].distance for j in range(n)] for i in range(n)])
    rows, cols = solve_assignment(costs)

    pairs = []
    flags = []
    for i, j in zip(rows, cols):
        chosen = costs[i, j]
        others = np.delete(costs[i], j)
        # absolute floor so exact-duplicate rows (chosen == 0) still flag
        ambiguous = bool(len(others) and
                         others.min() <= (1.0 + AMBIGUITY_MARGIN) * chosen + 1e-12)
        pairs.append((int(i), int(j), results[i, j]))
        flags.append(ambiguous)
    return BatchAssignment(tuple(pairs), tuple(flags))


def correspondence_indices(n: int, shift: int, mirrored: bool) -> np.ndarray:
    """Index into the back contour matched to each front contour vertex.

    Front vertex i corresponds to back vertex (shift + i) mod n, with the
    back index order reversed first when the match was mirrored.
    """
    forward = (shift + np.arange(n)) % n
    if mirrored:
        return (n - forward) % n
    return forward


def initial_alignment(front_contour_3d: np.ndarray, back_contour_3d: np.ndarray,
                      shift: int, mirrored: bool) -> RigidTransform:
    """Rigid transform mapping the back 3D contour onto the front one using
    the vertex correspondence implied by a descriptor match."""
    front_pts = np.asarray(front_contour_3d, dtype=np.float64)
    back_pts = np.asarray(back_contour_3d, dtype=np.float64)
    if front_pts.shape != back_pts.shape or front_pts.ndim != 2 or front_pts.shape[1] != 3:
        raise ValueError("contours must be matching (n, 3) arrays")
    order = correspondence_indices(len(front_pts), shift, mirrored)
    return rigid_fit_svd(back_pts[order], front_pts)
