"""2-D toy datasets and sample-quality metrics.

The metrics are distribution distances on raw point clouds (no feature
extractor at desk scale): sliced Wasserstein-1 over random projections and
the energy distance. Both are symmetric and zero on identical sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

DATASET_KINDS = ("two_moons", "gaussian_ring8", "checkerboard")

RING8_RADIUS = 2.0
RING8_STD = 0.1
MOONS_NOISE_STD = 0.05


@dataclass
class SampleSet:
    """An (n, d) point cloud plus a provenance tag (dataset name or run id)."""

    points: np.ndarray
    tag: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")


def _sample_two_moons(n: int, rng: np.random.Generator) -> np.ndarray:
    # Interleaved half circles: upper moon (cos a, sin a), lower moon
    # (1 - cos a, 0.5 - sin a), a ~ U[0, pi]; Gaussian jitter, then centered
    # at the origin and scaled by 2 so the cloud spans roughly [-3, 3].
    angles = rng.uniform(0.0, np.pi, size=n)
    branch = rng.integers(0, 2, size=n)
    x = np.where(branch == 0, np.cos(angles), 1.0 - np.cos(angles))
    y = np.where(branch == 0, np.sin(angles), 0.5 - np.sin(angles))
    pts = np.stack([x, y], axis=1) + MOONS_NOISE_STD * rng.standard_normal((n, 2))
    return 2.0 * (pts - np.array([0.5, 0.25]))


def _sample_gaussian_ring8(n: int, rng: np.random.Generator) -> np.ndarray:
    # Eight isotropic Gaussians, means on the radius-2 circle at angles
    # k*pi/4, std 0.1, uniform component choice.
    k = rng.integers(0, 8, size=n)
    angles = k * (np.pi / 4.0)
    means = RING8_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return means + RING8_STD * rng.standard_normal((n, 2))


_CHECKER_CELLS = np.array(
    [(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0],
    dtype=np.float64,
)


def _sample_checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    # Uniform over the 8 "black" unit cells of a 4x4 board on [-2, 2]^2.
    idx = rng.integers(0, len(_CHECKER_CELLS), size=n)
    return _CHECKER_CELLS[idx] + rng.random((n, 2))


_SAMPLERS = {
    "two_moons": _sample_two_moons,
    "gaussian_ring8": _sample_gaussian_ring8,
    "checkerboard": _sample_checkerboard,
}


def dataset_sampler(kind: str):
    """Return the ``(n, rng) -> (n, 2)`` sampler for a named toy dataset."""
    try:
        return _SAMPLERS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}; known: {DATASET_KINDS}") from None


def sample_dataset(kind: str, n: int, seed: int) -> SampleSet:
    """Draw n points from a named dataset; deterministic per seed."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    sampler = dataset_sampler(kind)
    return SampleSet(sampler(n, np.random.default_rng(seed)), tag=kind)


def _points(x) -> np.ndarray:
    pts = x.points if isinstance(x, SampleSet) else np.asarray(x, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("expected an (n, d) array of points")
    return pts


def sliced_wasserstein(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """Mean 1-D Wasserstein-1 distance over random unit projections.

    Deterministic per seed and invariant to permuting points within a set.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    if n_projections < 1:
        raise ValueError("need at least one projection")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, pa.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for direction in dirs:
        total += wasserstein_distance(pa @ direction, pb @ direction)
    return total / n_projections


def energy_distance(a, b) -> float:
    """Energy distance ``2 E|A-B| - E|A-A'| - E|B-B'|`` via full pairwise sums.

    Uses all-pairs means (diagonal included), so identical sets give exactly 0.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    d_ab = float(cdist(pa, pb).mean())
    d_aa = float(cdist(pa, pa).mean())
    d_bb = float(cdist(pb, pb).mean())
    return 2.0 * d_ab - d_aa - d_bb
