"""2D outline extraction and the cyclic turning-angle shape descriptor.

A projected scan becomes: alpha-shape outer boundary -> uniformly resampled
clockwise contour -> vector of accumulated turning angles. The descriptor,
together with the edge length, fully encodes the outline up to rigid motion
of the plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import AlphaDegenerate, AlphaTooSmall

TWO_PI = 2.0 * np.pi

DEFAULT_SAMPLES = 200          # contour vertex count used across the pipeline
ALPHA_SPACING_FACTOR = 4.0     # alpha = factor x median NN spacing,
ALPHA_CLAMP_MM = (0.5, 10.0)   # clamped to this range


def signed_area(vertices: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _check_simple(vertices: np.ndarray) -> bool:
    """Edge-pair intersection test over all non-adjacent edge pairs."""
    m = len(vertices)
    a = vertices
    b = np.roll(vertices, -1, axis=0)

    def cross(o, p, q):
        return (p[..., 0] - o[..., 0]) * (q[..., 1] - o[..., 1]) - \
               (p[..., 1] - o[..., 1]) * (q[..., 0] - o[..., 0])

    # Chunk rows to bound the O(m^2) temporaries.
    for lo in range(0, m, 256):
        hi = min(lo + 256, m)
        i = np.arange(lo, hi)[:, None]
        j = np.arange(m)[None, :]
        adjacent = (j == i) | (j == (i + 1) % m) | (j == (i - 1) % m)
        d1 = cross(a[lo:hi, None], b[lo:hi, None], a[None, :])
        d2 = cross(a[lo:hi, None], b[lo:hi, None], b[None, :])
        d3 = cross(a[None, :], b[None, :], a[lo:hi, None])
        d4 = cross(a[None, :], b[None, :], b[lo:hi, None])
        proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
        # Collinear touch/overlap between non-adjacent edges also breaks simplicity.
        touch = (d1 == 0) & (d2 == 0) & _overlap_1d(a[lo:hi, None], b[lo:hi, None],
                                                    a[None, :], b[None, :])
        if np.any((proper | touch) & ~adjacent):
            return False
    return True


def _overlap_1d(p1, p2, q1, q2):
    """Axis-wise bounding-interval overlap for collinear segment pairs."""
    ok = np.ones(np.broadcast_shapes(p1.shape[:-1], q1.shape[:-1]), dtype=bool)
    for ax in range(2):
        lo1 = np.minimum(p1[..., ax], p2[..., ax])
        hi1 = np.maximum(p1[..., ax], p2[..., ax])
        lo2 = np.minimum(q1[..., ax], q2[..., ax])
        hi2 = np.maximum(q1[..., ax], q2[..., ax])
        ok &= (lo1 <= hi2) & (lo2 <= hi1)
    return ok


@dataclass(frozen=True)
class Polygon2:
    """A simple closed polygon (implicit edge from the last vertex to the first)."""

    vertices: NDArray[np.float64]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (N, 2) array")
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        edges = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        if edges.min() <= 1e-9:
            raise ValueError("consecutive vertices closer than 1e-9 mm")
        if not _check_simple(v):
            raise ValueError("polygon is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def perimeter(self) -> float:
        v = self.vertices
        return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))


@dataclass(frozen=True)
class Contour:
    """A closed outline resampled to n_c vertices, stored clockwise.

    ``perimeter`` is the source polygon's perimeter; each resampled vertex
    sits at arc-length k * perimeter / n_c along it, so the common edge
    length is perimeter / n_c.
    """

    vertices: NDArray[np.float64]
    perimeter: float

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 8:
            raise ValueError("contour needs an (n_c >= 8, 2) vertex array")
        if signed_area(v) >= 0:
            raise ValueError("contour must be clockwise (negative signed area)")
        if not self.perimeter > 0:
            raise ValueError("perimeter must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n_samples(self) -> int:
        return len(self.vertices)

    @property
    def edge_length(self) -> float:
        return self.perimeter / self.n_samples

    def with_start(self, start: int) -> "Contour":
        """Same contour with vertex ``start`` moved to position 0."""
        if not 0 <= start < self.n_samples:
            raise ValueError(f"start {start} out of range [0, {self.n_samples})")
        return Contour(np.roll(self.vertices, -start, axis=0), self.perimeter)

    def mirrored(self) -> "Contour":
        """Reflected contour: vertex order reversed (vertex 0 stays first),
        then mirrored across the x-axis so the result is clockwise again."""
        v = np.concatenate([self.vertices[:1], self.vertices[1:][::-1]])
        return Contour(v * np.array([1.0, -1.0]), self.perimeter)


@dataclass(frozen=True)
class ShapeDescriptor:
    """Accumulated turning angles of a clockwise contour.

    ``theta_bar[i]`` is the sum of the signed exterior angles at vertices
    0..i, with clockwise turns counted positive; the final entry is 2*pi for
    any simple closed contour. ``edge_length`` carries the contour scale,
    which the angle vector alone does not.
    """

    theta_bar: NDArray[np.float64]
    edge_length: float

    def __post_init__(self):
        tb = np.asarray(self.theta_bar, dtype=np.float64)
        if tb.ndim != 1 or len(tb) < 8:
            raise ValueError("theta_bar must be a vector of length >= 8")
        if abs(tb[-1] - TWO_PI) > 1e-6:
            raise ValueError(f"turning angles must accumulate to 2*pi, got {tb[-1]:.8f}")
        tb.setflags(write=False)
        object.__setattr__(self, "theta_bar", tb)

    @property
    def n_samples(self) -> int:
        return len(self.theta_bar)

    def raw_angles(self) -> NDArray[np.float64]:
        """Per-vertex turning angles recovered from the accumulated sums."""
        return np.diff(self.theta_bar, prepend=0.0)


def turning_angles(vertices: np.ndarray) -> NDArray[np.float64]:
    """Signed exterior angle at every vertex, clockwise turns positive."""
    e_prev = vertices - np.roll(vertices, 1, axis=0)
    e_next = np.roll(vertices, -1, axis=0) - vertices
    cross = e_prev[:, 0] * e_next[:, 1] - e_prev[:, 1] * e_next[:, 0]
    dot = np.sum(e_prev * e_next, axis=1)
    angles = -np.arctan2(cross, dot)
    if np.any(np.abs(angles) >= np.pi):
        raise ValueError("contour has a 180-degree reversal spike")
    return angles


def descriptor(contour: Contour) -> ShapeDescriptor:
    """Shape descriptor of a contour anchored at its vertex 0."""
    return ShapeDescriptor(np.cumsum(turning_angles(contour.vertices)),
                           contour.edge_length)


def descriptor_with_start(contour: Contour, start: int) -> ShapeDescriptor:
    """Descriptor of the same contour re-anchored at vertex ``start``."""
    return descriptor(contour.with_start(start))


def resample_uniform(poly: Polygon2, n_samples: int = DEFAULT_SAMPLES) -> Contour:
    """Resample a polygon at n_samples uniform arc-length positions.

    Sampling starts at vertex 0 and runs clockwise; counter-clockwise input
    is reversed first (vertex 0 stays the starting point).
    """
    if n_samples < 8:
        raise ValueError(f"n_samples must be >= 8, got {n_samples}")
    v = poly.vertices
    if signed_area(v) > 0:
        v = np.concatenate([v[:1], v[1:][::-1]])
    seg = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    perimeter = float(cum[-1])
    t = np.arange(n_samples) * (perimeter / n_samples)
    idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(v) - 1)
    frac = (t - cum[idx]) / seg[idx]
    samples = v[idx] + frac[:, None] * (np.roll(v, -1, axis=0)[idx] - v[idx])
    return Contour(samples, perimeter)


def default_alpha(points2d: np.ndarray) -> float:
    """Alpha radius scaled to sampling density: 4x the median NN spacing,
    clamped to [0.5, 10] mm."""
    pts = np.asarray(points2d, dtype=np.float64)
    d, _ = cKDTree(pts).query(pts, k=2)
    alpha = ALPHA_SPACING_FACTOR * float(np.median(d[:, 1]))
    return float(np.clip(alpha, *ALPHA_CLAMP_MM))


def alpha_shape_contour(points2d: np.ndarray, alpha: float) -> Polygon2:
    """Outer boundary of the alpha shape of a 2D point set.

    Triangles of the Delaunay triangulation with circumradius <= alpha form
    the alpha complex; edges used by exactly one kept triangle form its
    boundary. The loop enclosing the largest area is returned.

    Raises AlphaTooSmall when that loop holds fewer than half the points
    (the complex fragmented), AlphaDegenerate when no closed boundary exists.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must form an (N, 2) array")
    if len(pts) < 10:
        raise ValueError(f"alpha shape needs >= 10 points, got {len(pts)}")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise AlphaDegenerate(f"triangulation failed: {exc}") from None

    simplices = tri.simplices
    keep = _circumradius(pts, simplices) <= alpha
    if not np.any(keep):
        raise AlphaDegenerate("no triangle satisfies the alpha radius")

    loops = _boundary_loops(simplices[keep])
    if not loops:
        raise AlphaDegenerate("alpha complex has no closed boundary loop")
    best = max(loops, key=lambda loop: abs(signed_area(pts[loop])))
    # Canonical phase: start at the lowest input index and walk toward its
    # smaller neighbor, so rigidly moved inputs yield identically ordered
    # contours (stitching order is otherwise arbitrary).
    best = np.roll(best, -int(np.argmin(best)))
    if len(best) > 2 and best[-1] < best[1]:
        best = np.concatenate([best[:1], best[1:][::-1]])
    polygon = Polygon2(pts[best])

    inside = points_in_polygon(pts, polygon.vertices)
    inside[best] = True
    coverage = inside.mean()
    if coverage < 0.5:
        raise AlphaTooSmall(
            f"largest alpha-shape component holds only {coverage:.0%} of the points; "
            f"increase alpha (currently {alpha:g} mm)")
    return polygon


def _circumradius(pts: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - \
            (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area2 = np.abs(cross)  # 2x triangle area
    with np.errstate(divide="ignore", invalid="ignore"):
        r = la * lb * lc / (2.0 * area2)
    r[area2 == 0] = np.inf
    return r


def _boundary_loops(simplices: np.ndarray) -> list[np.ndarray]:
    """Vertex loops of the boundary of a triangle set.

    Boundary edges bound exactly one triangle. Loops are walked edge to
    edge; a revisited vertex pinches the walk and the enclosed cycle is
    split off, so every returned loop has distinct vertices.
    """
    edges: dict[tuple[int, int], int] = {}
    for s in simplices:
        for u, w in ((s[0], s[1]), (s[1], s[2]), (s[2], s[0])):
            key = (min(u, w), max(u, w))
            edges[key] = edges.get(key, 0) + 1
    boundary = [e for e, n in edges.items() if n == 1]
    adjacency: dict[int, list[int]] = {}
    for u, w in boundary:
        adjacency.setdefault(u, []).append(w)
        adjacency.setdefault(w, []).append(u)

    unused = {e: True for e in boundary}
    loops: list[np.ndarray] = []
    for start_edge in boundary:
        if not unused[start_edge]:
            continue
        u, w = start_edge
        unused[start_edge] = False
        path = [u, w]
        pos = {u: 0, w: 1}
        while True:
            cur = path[-1]
            nxt = next((n for n in adjacency[cur]
                        if unused.get((min(cur, n), max(cur, n)), False)), None)
            if nxt is None:
                if len(path) >= 4 and path[0] == path[-1]:
                    loops.append(np.asarray(path[:-1], dtype=np.intp))
                break
            unused[(min(cur, nxt), max(cur, nxt))] = False
            if nxt in pos:
                cut = pos[nxt]
                cycle = path[cut:]
                if len(cycle) >= 3:
                    loops.append(np.asarray(cycle, dtype=np.intp))
                for vtx in path[cut + 1:]:
                    pos.pop(vtx, None)
                path = path[:cut + 1]
                if len(path) == 1 and path[0] == nxt:
                    break
            else:
                pos[nxt] = len(path)
                path.append(nxt)
    return loops


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized crossing-number containment test."""
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    straddles = (y1 <= y) != (y2 <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (x < x_cross)
    return np.sum(hits, axis=1) % 2 == 1


def contour_to_dict(contour: Contour, desc: ShapeDescriptor | None = None) -> dict:
    """JSON-ready form of a contour and (optionally) its descriptor."""
    out = {
        "n_samples": contour.n_samples,
        "perimeter_mm": contour.perimeter,
        "edge_length_mm": contour.edge_length,
        "vertices": [[float(x), float(y)] for x, y in contour.vertices],
    }
    if desc is not None:
        out["theta_bar"] = [float(v) for v in desc.theta_bar]
    return out
