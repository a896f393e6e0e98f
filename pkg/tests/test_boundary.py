"""Mask-based candidate filtering and angular-gap boundary extraction."""

import numpy as np
import pytest

from sherdbatch.boundary import (BoundarySet, CameraView, extract_boundary,
                                 mask_boundary_pixels, mask_candidate_filter)
from sherdbatch.errors import NoViews, TooFewNeighbors
from sherdbatch.geometry import PointCloud, RigidTransform, apply_transform

from conftest import random_transform


def hemisphere_cloud(rng, n=10_000, radius=50.0, jitter=0.1):
    """Quasi-uniform (Fibonacci spiral) hemisphere samples plus rim truth.

    The rim truth is the last sample row: points within one median
    nearest-neighbor spacing of the equator, which is exactly the band the
    angular-gap criterion is meant to find.
    """
    from scipy.spatial import cKDTree

    i = np.arange(n)
    z = (i + 0.5) / n * radius  # uniform in z == area-uniform on the sphere
    golden = np.pi * (3 - np.sqrt(5))
    phi = golden * i
    rho = np.sqrt(radius ** 2 - z ** 2)
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    pts += rng.normal(0, jitter, pts.shape)
    d, _ = cKDTree(pts).query(pts, k=2)
    spacing = float(np.median(d[:, 1]))
    rim_truth = pts[:, 2] < spacing
    return PointCloud(pts), rim_truth, spacing


def grid_cloud(n=40, spacing=1.0):
    xs = np.arange(n) * spacing
    gx, gy = np.meshgrid(xs, xs)
    return PointCloud(np.column_stack([gx.ravel(), gy.ravel(),
                                       np.zeros(n * n)]))


class TestExtractBoundary:
    def test_grid_interior_not_boundary(self):
        cloud = grid_cloud()
        center = 20 * 40 + 20
        result = extract_boundary(cloud, [center], k=8)
        assert len(result) == 0

    def test_grid_edge_is_boundary(self):
        cloud = grid_cloud()
        edge = 20 * 40  # first column, middle row
        result = extract_boundary(cloud, [edge], k=8)
        assert result.indices.tolist() == [edge]

    def test_hemisphere_rim_precision_recall(self, rng):
        cloud, rim_truth, _ = hemisphere_cloud(rng)
        result = extract_boundary(cloud)
        found = np.zeros(len(cloud), dtype=bool)
        found[result.indices] = True
        tp = np.count_nonzero(found & rim_truth)
        precision = tp / max(found.sum(), 1)
        recall = tp / max(rim_truth.sum(), 1)
        assert precision > 0.9
        assert recall > 0.9

    def test_rigid_motion_invariance_exact(self, rng):
        cloud, _, _ = hemisphere_cloud(rng, n=3000)
        base = extract_boundary(cloud)
        moved = extract_boundary(apply_transform(random_transform(rng), cloud))
        assert np.array_equal(base.indices, moved.indices)

    def test_threshold_monotonicity(self, rng):
        cloud, _, _ = hemisphere_cloud(rng, n=3000)
        loose = set(extract_boundary(cloud, gap_threshold=np.pi / 2).indices)
        tight = set(extract_boundary(cloud, gap_threshold=5 * np.pi / 6).indices)
        assert tight <= loose

    def test_too_few_neighbors(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)))
        with pytest.raises(TooFewNeighbors):
            extract_boundary(cloud, k=16)

    def test_k_minimum(self, rng):
        cloud = PointCloud(rng.normal(size=(100, 3)))
        with pytest.raises(ValueError):
            extract_boundary(cloud, k=3)

    def test_empty_candidates_rejected(self, rng):
        cloud = PointCloud(rng.normal(size=(100, 3)))
        with pytest.raises(ValueError):
            extract_boundary(cloud, [])

    def test_boundary_set_sorted_unique(self):
        bs = BoundarySet(np.array([5, 1, 5, 3]))
        assert bs.indices.tolist() == [1, 3, 5]
        assert BoundarySet.from_dict(bs.to_dict()).indices.tolist() == [1, 3, 5]


def down_looking_camera(height=200.0, focal=800.0, size=512):
    """Camera on +z looking straight down at the origin."""
    rot = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    pose = RigidTransform(rot, -rot @ np.array([0.0, 0, height]))
    k = np.array([[focal, 0, size / 2], [0, focal, size / 2], [0, 0, 1.0]])
    return pose, k, size


class TestMaskFilter:
    def make_setup(self, rng, n=2000, radius=50.0):
        cloud, rim_truth, spacing = hemisphere_cloud(rng, n=n, radius=radius)
        pose, k, size = down_looking_camera()
        # silhouette of the hemisphere from above is a disk of `radius`
        vv, uu = np.mgrid[0:size, 0:size]
        height = 200.0
        focal = 800.0
        # project a few silhouette points to size the disk in pixels
        pix_radius = focal * radius / height
        mask = (uu - size / 2) ** 2 + (vv - size / 2) ** 2 <= pix_radius ** 2
        view = CameraView(intrinsics=k, pose=pose, mask=mask)
        vis = tuple((0,) for _ in range(len(cloud)))
        cloud = PointCloud(cloud.points, visibility=vis)
        return cloud, view, rim_truth

    def test_matches_brute_force_projection_oracle(self, rng):
        cloud, view, _ = self.make_setup(rng)
        threshold = 3.0
        got = mask_candidate_filter(cloud, [view], threshold)

        contour = view.mask_contour
        expected = []
        for i, p in enumerate(cloud.points):
            cam = view.pose.rotation @ p + view.pose.translation
            u = view.intrinsics[0, 0] * cam[0] / cam[2] + view.intrinsics[0, 2]
            v = view.intrinsics[1, 1] * cam[1] / cam[2] + view.intrinsics[1, 2]
            d = np.sqrt(((contour - [u, v]) ** 2).sum(axis=1)).min()
            if d < threshold:
                expected.append(i)
        assert got.tolist() == expected

    def test_rim_included_apex_excluded(self, rng):
        cloud, view, rim_truth = self.make_setup(rng, n=4000)
        got = set(mask_candidate_filter(cloud, [view], 3.0).tolist())
        # the apex projects to the mask center, far from the silhouette
        apex = int(np.argmax(cloud.points[:, 2]))
        assert apex not in got
        # every true rim point projects onto the silhouette edge
        rim = set(np.nonzero(rim_truth)[0].tolist())
        assert len(rim & got) / len(rim) > 0.95

    def test_point_on_contour_pixel_included(self):
        pose, k, size = down_looking_camera()
        mask = np.zeros((size, size), dtype=bool)
        mask[200:300, 200:300] = True
        view = CameraView(intrinsics=k, pose=pose, mask=mask)
        # world point projecting exactly onto pixel (u=200, v=250)
        height, focal = 200.0, 800.0
        x = (200 - size / 2) * height / focal
        y = -(250 - size / 2) * height / focal
        cloud = PointCloud(np.array([[x, y, 0.0]]), visibility=((0,),))
        assert mask_candidate_filter(cloud, [view], 2.0).tolist() == [0]

    def test_unseen_points_excluded(self, rng):
        cloud, view, _ = self.make_setup(rng, n=500)
        vis = tuple(() for _ in range(len(cloud)))
        hidden = PointCloud(cloud.points, visibility=vis)
        assert mask_candidate_filter(hidden, [view], 1e9).size == 0

    def test_no_views_raises(self, rng):
        cloud, _, _ = self.make_setup(rng, n=100)
        with pytest.raises(NoViews):
            mask_candidate_filter(cloud, [], 3.0)

    def test_candidates_superset_of_final_boundary(self, rng):
        cloud, view, _ = self.make_setup(rng, n=4000)
        candidates = mask_candidate_filter(cloud, [view], 6.0)
        final = extract_boundary(cloud, candidates)
        assert set(final.indices.tolist()) <= set(candidates.tolist())


def test_mask_boundary_pixels_square():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:5, 3:7] = True
    contour = mask_boundary_pixels(mask)
    # interior of the 3x4 block is a single 1x2 run; 10 of 12 pixels are edge
    assert len(contour) == 10
    for u, v in contour:
        assert mask[int(v), int(u)]
