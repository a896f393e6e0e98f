"""Synthetic fragment generator with full ground truth.

Fragments are thin curved shells: a star-polygon outline extruded between
two concentric spheres (or two parallel planes for flat pieces). The front
scan samples the outer face plus the fracture strip, the back scan the
inner face plus the same strip, each with its own sampling phase so no
point coincides between the two. The whole fracture outline carries a
two-harmonic sinusoidal displacement standing in for fracture texture.
Everything is seeded and byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .contour import (Polygon2, descriptor, points_in_polygon, resample_uniform,
                      signed_area)
from .errors import DistinctnessFailure, InvalidSpec
from .geometry import PointCloud, RigidTransform
from .matching import descriptor_distance

MAX_BATCH = 20
MAX_OVERLAP_FRACTION = 0.2
BOUNDARY_LABEL_RADIUS = 1.25  # in units of sample_spacing


@dataclass(frozen=True)
class FragmentSpec:
    """Recipe for one synthetic fragment.

    ``outline`` is a simple star polygon in mm; ``shell_radius`` is the
    parent vessel's outer radius (math.inf for a flat piece). The ripple
    fields shape the fracture-strip displacement and belong to the fragment
    surface itself, so both scans sample the identical wall.
    """

    outline: NDArray[np.float64]
    shell_radius: float
    thickness: float
    sample_spacing: float
    noise_sigma: float
    seed: int
    ripple_amplitude: float = 0.15
    ripple_frequency: int = 7
    ripple_phase: float = 0.0
    ripple2_amplitude: float = 0.0
    ripple2_frequency: int = 23
    ripple2_phase: float = 0.0
    placement_mm: float = 15.0

    def __post_init__(self):
        outline = np.asarray(self.outline, dtype=np.float64)
        if outline.ndim != 2 or outline.shape[1] != 2 or len(outline) < 4:
            raise InvalidSpec("outline must be an (m >= 4, 2) polygon")
        outline.setflags(write=False)
        object.__setattr__(self, "outline", outline)
        if not self.thickness > 0 or not self.thickness < self.shell_radius:
            raise InvalidSpec("thickness must satisfy 0 < thickness < shell_radius")
        if not self.sample_spacing > 0:
            raise InvalidSpec("sample_spacing must be positive")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        if math.isfinite(self.shell_radius):
            rho_max = float(np.linalg.norm(outline, axis=1).max())
            if rho_max > 0.9 * (self.shell_radius - self.thickness):
                raise InvalidSpec(
                    f"outline radius {rho_max:.1f} mm does not fit a shell of "
                    f"radius {self.shell_radius:.1f} mm")


@dataclass(frozen=True)
class ScanTruth:
    """Ground truth for one partial scan."""

    pose: RigidTransform                 # canonical frame -> scanned frame
    boundary_labels: NDArray[np.int64]   # true open-edge points
    strip_indices: NDArray[np.int64]     # fracture-strip points
    overlap_fraction: float


@dataclass(frozen=True)
class FragmentTruth:
    front: ScanTruth
    back: ScanTruth
    canonical_points: NDArray[np.float64]  # noise-free union of both samplings

    def registration_transform(self) -> RigidTransform:
        """Transform mapping the back scan into the front scan's frame."""
        return self.front.pose.compose(self.back.pose.inverse())

    def gt_model(self) -> PointCloud:
        """Complete noise-free model posed in the front scan's frame."""
        return PointCloud(self.front.pose.apply(self.canonical_points))


@dataclass(frozen=True)
class GroundTruth:
    """Batch-level truth: pairing permutation plus per-fragment records.

    ``fragments[i]`` describes front scan i; its back scan sits at position
    ``pairing[i]`` of the (shuffled) back batch.
    """

    pairing: NDArray[np.int64]
    fragments: tuple[FragmentTruth, ...]

    def __post_init__(self):
        p = np.asarray(self.pairing, dtype=np.int64)
        if sorted(p.tolist()) != list(range(len(p))):
            raise InvalidSpec("pairing must be a permutation")
        p.setflags(write=False)
        object.__setattr__(self, "pairing", p)


@dataclass(frozen=True)
class SynthPreset:
    """Parameter ranges for batch generation.

    The defaults keep each scan's strip share well under the 20% cap while
    staying light enough for fast tests; ``small_overlap_preset`` tightens
    the strip share to <= 10% of each scan (denser sampling, thinner walls)
    for registration experiments in the hard regime.
    """

    control_points: tuple[int, int] = (8, 14)
    outline_radius: tuple[float, float] = (28.0, 42.0)
    radius_variation: tuple[float, float] = (0.2, 0.35)
    shell_radius: tuple[float, float] = (160.0, 300.0)
    flat_probability: float = 0.2
    thickness: tuple[float, float] = (1.0, 1.4)
    sample_spacing: float = 1.1
    noise_sigma: float = 0.05
    ripple_amplitude: float = 0.4
    ripple_frequency: tuple[int, int] = (6, 10)
    ripple2_amplitude: float = 0.15
    ripple2_frequency: tuple[int, int] = (25, 40)
    smoothing_rounds: int = 2
    placement_mm: float = 15.0
    distinctness_floor: float = 1.0
    n_samples: int = 200
    target_overlap: float | None = None  # scale outlines until the strip share fits


def small_overlap_preset(noise_sigma: float = 0.05) -> SynthPreset:
    """Fragments whose fracture strip is at most 10% of each scan.

    Outlines carry many medium-sharp corners: irregular fracture
    silhouettes anchor the in-plane rotation during registration, while
    razor-thin spikes would destabilize the contour descriptor. Outlines
    are scaled up until the predicted strip share fits the target.
    """
    return SynthPreset(
        control_points=(10, 16),
        outline_radius=(36.0, 50.0),
        radius_variation=(0.22, 0.36),
        smoothing_rounds=3,
        thickness=(0.75, 0.9),
        sample_spacing=0.6,
        ripple_amplitude=0.7,
        ripple_frequency=(8, 13),
        ripple2_amplitude=0.2,
        ripple2_frequency=(40, 60),
        noise_sigma=noise_sigma,
        target_overlap=0.1,
    )


def _z_outer(rho: np.ndarray, shell_radius: float) -> np.ndarray:
    if math.isinf(shell_radius):
        return np.zeros_like(rho)
    return np.sqrt(shell_radius ** 2 - rho ** 2) - shell_radius


def _z_inner(rho: np.ndarray, shell_radius: float, thickness: float) -> np.ndarray:
    if math.isinf(shell_radius):
        return np.full_like(rho, -thickness)
    inner = shell_radius - thickness
    return np.sqrt(inner ** 2 - rho ** 2) - shell_radius


class _OutlineWalk:
    """Arc-length parameterization of the (rippled) outline wall."""

    def __init__(self, spec: FragmentSpec):
        v = spec.outline
        seg = np.roll(v, -1, axis=0) - v
        seg_len = np.linalg.norm(seg, axis=1)
        self.v = v
        self.seg = seg
        self.seg_len = seg_len
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum[-1])
        self.spec = spec

    def points(self, arc: np.ndarray) -> np.ndarray:
        """Rippled outline points at the given arc positions."""
        arc = np.mod(arc, self.length)
        idx = np.clip(np.searchsorted(self.cum, arc, side="right") - 1, 0,
                      len(self.v) - 1)
        frac = (arc - self.cum[idx]) / self.seg_len[idx]
        base = self.v[idx] + frac[:, None] * self.seg[idx]
        tangent = self.seg[idx] / self.seg_len[idx][:, None]
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        # Star polygons are sampled around their kernel at the origin, so
        # outward is simply away from it.
        flip = np.sign(np.sum(normal * base, axis=1))
        flip[flip == 0] = 1.0
        normal *= flip[:, None]
        s = self.spec
        ripple = s.ripple_amplitude * np.sin(
            2.0 * np.pi * s.ripple_frequency * arc / self.length + s.ripple_phase)
        if s.ripple2_amplitude:
            ripple = ripple + s.ripple2_amplitude * np.sin(
                2.0 * np.pi * s.ripple2_frequency * arc / self.length + s.ripple2_phase)
        return base + ripple[:, None] * normal

    def dense_polygon(self, step: float) -> np.ndarray:
        """Rippled outline as a dense polygon (for face clipping)."""
        n = max(64, int(round(self.length / step)))
        return self.points(np.arange(n) * (self.length / n))


def _face_points(spec: FragmentSpec, fracture: np.ndarray,
                 rng: np.random.Generator, inner: bool) -> np.ndarray:
    """Jittered-grid sampling of the face interior, lifted to one face.

    The face is clipped by the rippled fracture outline so it meets the
    strip wall exactly."""
    s = spec.sample_spacing
    lo = fracture.min(axis=0) - s
    hi = fracture.max(axis=0) + s
    offset = rng.uniform(0.0, s, size=2)
    xs = np.arange(lo[0] + offset[0], hi[0], s)
    ys = np.arange(lo[1] + offset[1], hi[1], s)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    grid += rng.uniform(-0.05 * s, 0.05 * s, size=grid.shape)
    grid = grid[points_in_polygon(grid, fracture)]
    rho = np.linalg.norm(grid, axis=1)
    z = _z_inner(rho, spec.shell_radius, spec.thickness) if inner \
        else _z_outer(rho, spec.shell_radius)
    return np.column_stack([grid, z])


def _strip_points(spec: FragmentSpec, walk: _OutlineWalk,
                  rng: np.random.Generator) -> np.ndarray:
    """One independent sampling of the fracture-strip wall."""
    s = spec.sample_spacing
    n_arc = max(8, int(round(walk.length / s)))
    arc = (np.arange(n_arc) + rng.uniform(0.0, 1.0)
           + rng.uniform(-0.45, 0.45, n_arc)) * (walk.length / n_arc)
    xy = walk.points(arc)
    rho = np.linalg.norm(xy, axis=1)
    z_top = _z_outer(rho, spec.shell_radius)
    z_bot = _z_inner(rho, spec.shell_radius, spec.thickness)
    pts = []
    for col in range(n_arc):
        height = z_top[col] - z_bot[col]
        n_lvl = max(2, int(round(height / s)) + 1)
        t = np.linspace(0.0, 1.0, n_lvl)
        z = z_bot[col] + t * height
        pts.append(np.column_stack([np.repeat(xy[col][None, :], n_lvl, axis=0), z]))
    return np.vstack(pts)


def _rim_polyline(spec: FragmentSpec, walk: _OutlineWalk, top: bool) -> np.ndarray:
    """Dense sampling of a scan's open edge, for boundary labeling."""
    step = spec.sample_spacing / 4.0
    n = max(32, int(round(walk.length / step)))
    arc = np.arange(n) * (walk.length / n)
    xy = walk.points(arc)
    rho = np.linalg.norm(xy, axis=1)
    z = _z_outer(rho, spec.shell_radius) if top \
        else _z_inner(rho, spec.shell_radius, spec.thickness)
    return np.column_stack([xy, z])


def _planar_pose(rng: np.random.Generator, placement: float,
                 flipped: bool) -> RigidTransform:
    psi = rng.uniform(0.0, 2.0 * np.pi)
    txy = rng.uniform(-placement, placement, size=2)
    c, s = np.cos(psi), np.sin(psi)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if flipped:
        rx = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
        rz = rz @ rx
    return RigidTransform(rz, np.array([txy[0], txy[1], 0.0]))


def generate_fragment(spec: FragmentSpec) -> tuple[PointCloud, PointCloud, FragmentTruth]:
    """Front scan, back scan, and ground truth for one fragment.

    The two scans sample the shared fracture strip independently, are
    perturbed with Gaussian noise, and receive random planar poses (the
    back one flipped upside down first).
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    walk = _OutlineWalk(spec)

    # Polygonized fracture outline shared by both faces (1 mm is far finer
    # than the ripple wavelengths). Faces come first in each cloud so the
    # strip indices form a contiguous tail.
    fracture = walk.dense_polygon(max(spec.sample_spacing, 1.0))
    front_face = _face_points(spec, fracture, rng, inner=False)
    front_wall = _strip_points(spec, walk, rng)
    back_face = _face_points(spec, fracture, rng, inner=True)
    back_wall = _strip_points(spec, walk, rng)
    front_canonical = np.vstack([front_face, front_wall])
    back_canonical = np.vstack([back_face, back_wall])
    front_strip = np.arange(len(front_face), len(front_canonical), dtype=np.int64)
    back_strip = np.arange(len(back_face), len(back_canonical), dtype=np.int64)

    noise_front = rng.normal(0.0, spec.noise_sigma, front_canonical.shape) \
        if spec.noise_sigma > 0 else 0.0
    noise_back = rng.normal(0.0, spec.noise_sigma, back_canonical.shape) \
        if spec.noise_sigma > 0 else 0.0
    front_noisy = front_canonical + noise_front
    back_noisy = back_canonical + noise_back

    front_rim = _rim_polyline(spec, walk, top=False)   # wall meets the inner face
    back_rim = _rim_polyline(spec, walk, top=True)     # wall meets the outer face
    radius = BOUNDARY_LABEL_RADIUS * spec.sample_spacing
    front_labels = _near_polyline(front_noisy, front_rim, radius)
    back_labels = _near_polyline(back_noisy, back_rim, radius)

    front_pose = _planar_pose(rng, spec.placement_mm, flipped=False)
    back_pose = _planar_pose(rng, spec.placement_mm, flipped=True)

    front_overlap = len(front_strip) / len(front_canonical)
    back_overlap = len(back_strip) / len(back_canonical)
    for frac in (front_overlap, back_overlap):
        if frac > MAX_OVERLAP_FRACTION:
            raise InvalidSpec(
                f"strip covers {frac:.0%} of a scan (limit {MAX_OVERLAP_FRACTION:.0%}); "
                "thin the fragment or enlarge the outline")

    truth = FragmentTruth(
        front=ScanTruth(front_pose, front_labels, front_strip, front_overlap),
        back=ScanTruth(back_pose, back_labels, back_strip, back_overlap),
        canonical_points=np.vstack([front_canonical, back_canonical]),
    )
    front_cloud = PointCloud(front_pose.apply(front_noisy))
    back_cloud = PointCloud(back_pose.apply(back_noisy))
    return front_cloud, back_cloud, truth


def _generate_within_target(spec: FragmentSpec, target: float | None
                            ) -> tuple[PointCloud, PointCloud, FragmentTruth]:
    """Generate a fragment, enlarging its outline if the realized strip
    share overshoots the preset target (level-count quantization can beat
    the prediction by one row)."""
    for _ in range(3):
        result = generate_fragment(spec)
        truth = result[2]
        if target is None or max(truth.front.overlap_fraction,
                                 truth.back.overlap_fraction) <= target:
            return result
        spec = replace(spec, outline=spec.outline * 1.2)
    return result


def _near_polyline(points: np.ndarray, polyline: np.ndarray, radius: float) -> NDArray[np.int64]:
    d, _ = cKDTree(polyline).query(points)
    return np.nonzero(d <= radius)[0].astype(np.int64)


def chaikin_smooth(vertices: np.ndarray, rounds: int = 2) -> np.ndarray:
    """Corner-cutting subdivision of a closed polygon (keeps it simple)."""
    v = np.asarray(vertices, dtype=np.float64)
    for _ in range(rounds):
        nxt = np.roll(v, -1, axis=0)
        out = np.empty((2 * len(v), 2))
        out[0::2] = 0.75 * v + 0.25 * nxt
        out[1::2] = 0.25 * v + 0.75 * nxt
        v = out
    return v


def random_outline(rng: np.random.Generator, preset: SynthPreset) -> np.ndarray:
    """A random fracture-like outline: a star polygon with rounded corners.

    Control radii vary enough to anchor in-plane rotation; corner-cutting
    rounds keep the silhouette smooth at the contour-descriptor sampling
    scale, like worn fracture edges.
    """
    m = int(rng.integers(preset.control_points[0], preset.control_points[1] + 1))
    while True:
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, m))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        if gaps.min() > 0.25 * (2.0 * np.pi / m):
            break
    base = rng.uniform(*preset.outline_radius)
    var = rng.uniform(*preset.radius_variation)
    r = base * (1.0 + var * rng.uniform(-1.0, 1.0, m))
    r = np.clip(r, 8.0, 75.0)
    star = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    return chaikin_smooth(star, rounds=preset.smoothing_rounds)


def _outline_descriptor(outline: np.ndarray, n_samples: int):
    return descriptor(resample_uniform(Polygon2(outline), n_samples))


def _overlap_rescale(outline: np.ndarray, thickness: float, spacing: float,
                     target: float) -> np.ndarray | None:
    """Scale an outline up until the predicted strip share fits the target.

    The strip holds about (perimeter/spacing) * levels points against
    area/spacing^2 face points; scaling the outline by L multiplies the
    former by L and the latter by L^2. Returns None when the needed scale
    would push the outline past the legal size range.
    """
    area = abs(signed_area(outline))
    seg = np.roll(outline, -1, axis=0) - outline
    perimeter = float(np.linalg.norm(seg, axis=1).sum())
    # Wall height exceeds the radial thickness on curved shells; 1.1 covers
    # the dome steepening before the level count is quantized.
    levels = max(2, int(round(1.1 * thickness / spacing)) + 1)
    strip = perimeter / spacing * levels
    tau = 0.85 * target  # head-room for sampling-phase fluctuation
    scale = max(1.0, strip * (1.0 - tau) * spacing ** 2 / (tau * area))
    scaled = outline * scale
    if np.linalg.norm(scaled, axis=1).max() > 72.0:
        return None
    return scaled


def generate_batch(n: int, seed: int, preset: SynthPreset = SynthPreset(),
                   adversarial: bool = False,
                   ) -> tuple[list[PointCloud], list[PointCloud], GroundTruth]:
    """n fragments with mutually distinct outlines, back batch shuffled.

    Outlines are rejection-sampled until every pairwise descriptor distance
    clears ``preset.distinctness_floor``; with ``adversarial=True`` fragment
    1 instead receives a near-duplicate of fragment 0's outline to exercise
    ambiguity reporting downstream.
    """
    if not 1 <= n <= MAX_BATCH:
        raise ValueError(f"batch size must be in [1, {MAX_BATCH}], got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    outlines: list[np.ndarray] = []
    thicknesses: list[float] = []
    descs = []
    for i in range(n):
        for attempt in range(100):
            cand = random_outline(rng, preset)
            thickness = float(rng.uniform(*preset.thickness))
            if preset.target_overlap is not None:
                cand = _overlap_rescale(cand, thickness, preset.sample_spacing,
                                        preset.target_overlap)
                if cand is None:
                    continue
            try:
                cand_desc = _outline_descriptor(cand, preset.n_samples)
            except ValueError:
                continue
            floor = min(
                (min(descriptor_distance(cand_desc, d).distance,
                     descriptor_distance(d, cand_desc).distance) for d in descs),
                default=np.inf)
            if floor > preset.distinctness_floor:
                outlines.append(cand)
                thicknesses.append(thickness)
                descs.append(cand_desc)
                break
        else:
            raise DistinctnessFailure(
                f"no outline distinct enough after 100 attempts (fragment {i}); "
                f"lower the floor ({preset.distinctness_floor} rad) or the batch size")

    if adversarial and n >= 2:
        # Perturbation well below the contour-sampling noise floor, so the
        # two outlines are indistinguishable to the descriptor.
        m = len(outlines[0])
        wobble = 1.0 + rng.uniform(-0.001, 0.001, m)
        outlines[1] = outlines[0] * wobble[:, None]
        thicknesses[1] = thicknesses[0]

    specs = []
    for outline, thickness in zip(outlines, thicknesses):
        flat = rng.uniform() < preset.flat_probability
        if flat:
            shell = math.inf
        else:
            rho_max = float(np.linalg.norm(outline, axis=1).max())
            lo = max(preset.shell_radius[0], rho_max / 0.85 + thickness)
            shell = rng.uniform(lo, max(preset.shell_radius[1], lo + 1.0))
        specs.append(FragmentSpec(
            outline=outline,
            shell_radius=shell,
            thickness=thickness,
            sample_spacing=preset.sample_spacing,
            noise_sigma=preset.noise_sigma,
            seed=int(rng.integers(2 ** 62)),
            ripple_amplitude=preset.ripple_amplitude,
            ripple_frequency=int(rng.integers(preset.ripple_frequency[0],
                                              preset.ripple_frequency[1] + 1)),
            ripple_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            ripple2_amplitude=preset.ripple2_amplitude,
            ripple2_frequency=int(rng.integers(preset.ripple2_frequency[0],
                                               preset.ripple2_frequency[1] + 1)),
            ripple2_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            placement_mm=preset.placement_mm,
        ))

    if adversarial and n >= 2:
        # The near-duplicate shares fragment 0's whole recipe (fracture
        # ripple, shell, sampling seed); only its outline differs by the
        # sub-resolution wobble applied above.
        specs[1] = replace(specs[0], outline=outlines[1])

    fragments = [_generate_within_target(spec, preset.target_overlap)
                 for spec in specs]

    perm = rng.permutation(n)
    back_clouds = [fragments[perm[p]][1] for p in range(n)]
    pairing = np.argsort(perm)  # front i -> back list position

    truth = GroundTruth(
        pairing=pairing.astype(np.int64),
        fragments=tuple(f[2] for f in fragments),
    )
    front_clouds = [f[0] for f in fragments]
    return front_clouds, back_clouds, truth
