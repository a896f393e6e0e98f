"""Shared test helpers: random shapes, random rigid transforms."""

from __future__ import annotations

import numpy as np
import pytest

from sherdbatch.contour import Contour, Polygon2, resample_uniform
from sherdbatch.geometry import RigidTransform


def star_vertices(rng: np.random.Generator, n_ctrl: int = 10,
                  radius: float = 30.0, variation: float = 0.35) -> np.ndarray:
    """A random simple star polygon around the origin."""
    while True:
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_ctrl))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        if gaps.min() > 0.2 * (2.0 * np.pi / n_ctrl):
            break
    r = radius * (1.0 + variation * rng.uniform(-1.0, 1.0, n_ctrl))
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def star_contour(rng: np.random.Generator, n_samples: int = 32, **kw) -> Contour:
    return resample_uniform(Polygon2(star_vertices(rng, **kw)), n_samples)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng: np.random.Generator, translation_scale: float = 20.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng),
                          rng.uniform(-translation_scale, translation_scale, 3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
