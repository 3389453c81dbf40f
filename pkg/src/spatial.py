"""
Nearest-neighbor queries over the input cloud, PCA normals and the
rejection samplers that build near-band and far-field query sets.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.neighbors import KDTree

from src.errors import (
    DegenerateNeighborhoodError,
    EmptyInputError,
    MPFError,
    SamplerStarvationError,
)
from src.geometry_io import PointCloud

logger = logging.getLogger(__name__)

DOMAIN_LOW = -1.0
DOMAIN_HIGH = 1.0

MIN_ACCEPTANCE = 0.01
STARVATION_PROPOSALS = 100_000
MIN_PROPOSAL_BATCH = 1024

# Second-largest covariance eigenvalue relative to the largest below which
# a neighborhood counts as rank-deficient.
RANK_TOLERANCE = 1e-12


class NearestIndex:
    """Exact Euclidean nearest-neighbor index over normalized points."""

    def __init__(self, points: np.ndarray, leaf_size: int = 40):
        """
        Build the index.

        Args:
            points: (N, 3) array of sample positions
            leaf_size: KD-tree leaf size

        Raises:
            EmptyInputError: When no points are given
        """
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise EmptyInputError("cannot build a nearest index over 0 points")
        self.points = points
        self.tree = KDTree(points, leaf_size=leaf_size)

    def __len__(self) -> int:
        return len(self.points)

    def distances(self, queries: np.ndarray) -> np.ndarray:
        """Distance from each query to its nearest indexed point."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) == 0:
            return np.zeros(0)
        dist, _ = self.tree.query(queries, k=1)
        return dist[:, 0]

    def nearest(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest distances and the indices of the matching points."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        dist, idx = self.tree.query(queries, k=1)
        return dist[:, 0], idx[:, 0]

    def knn(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Indices of the k nearest points, closest first."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        _, idx = self.tree.query(queries, k=k)
        return idx


def build_index(cloud: PointCloud) -> NearestIndex:
    """
    Build a NearestIndex over a normalized cloud.

    Args:
        cloud: Non-empty point cloud

    Returns:
        NearestIndex
    """
    return NearestIndex(cloud.points)


def nearest_distance(index: NearestIndex, x) -> float:
    """
    Exact distance from x to the closest input point.

    Args:
        index: Built index
        x: 3-vector

    Returns:
        Non-negative distance
    """
    return float(index.distances(np.asarray(x, dtype=np.float64))[0])


def _smallest_eigenvectors(neighborhoods: np.ndarray) -> Tuple[np.ndarray,
                                                               np.ndarray]:
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    degenerate = (eigvals[:, 2] <= 0.0) | \
        (eigvals[:, 1] <= RANK_TOLERANCE * eigvals[:, 2])
    return eigvecs[:, :, 0], degenerate


def pca_normal(index: NearestIndex, cloud: PointCloud, p, k: int = 16):
    """
    Estimate an unoriented unit normal at p from its k nearest neighbors.

    Args:
        index: Index built over cloud
        cloud: Point cloud the index was built from
        p: Query position
        k: Neighbor count (>= 3)

    Returns:
        Unit 3-vector; its sign is arbitrary

    Raises:
        DegenerateNeighborhoodError: When the neighborhood has rank < 2
    """
    if k < 3:
        raise MPFError(f"PCA needs k >= 3 neighbors, got {k}")
    if cloud.count < k:
        raise MPFError(f"cloud has {cloud.count} points, fewer than k={k}")
    idx = index.knn(np.asarray(p, dtype=np.float64), k)
    normal, degenerate = _smallest_eigenvectors(cloud.points[idx])
    if degenerate[0]:
        raise DegenerateNeighborhoodError(
            f"neighborhood of {np.asarray(p).tolist()} is collinear or "
            f"coincident"
        )
    return normal[0] / np.linalg.norm(normal[0])


def estimate_normals(index: NearestIndex, cloud: PointCloud, k: int = 16,
                     chunk: int = 8192,
                     skip_degenerate: bool = False) -> np.ndarray:
    """
    PCA normals for every point of the cloud.

    Args:
        index: Index built over cloud
        cloud: Point cloud
        k: Neighbor count
        chunk: Points processed per batch
        skip_degenerate: Return a zero row for each rank-deficient
            neighborhood instead of raising

    Returns:
        (N, 3) unit normals; zero rows mark skipped neighborhoods

    Raises:
        DegenerateNeighborhoodError: When a neighborhood has rank < 2 and
            skip_degenerate is off
    """
    if cloud.count < k:
        raise MPFError(f"cloud has {cloud.count} points, fewer than k={k}")
    normals = np.empty_like(cloud.points)
    skipped = []
    for start in range(0, cloud.count, chunk):
        block = cloud.points[start:start + chunk]
        idx = index.knn(block, k)
        vecs, degenerate = _smallest_eigenvectors(cloud.points[idx])
        bad = np.flatnonzero(degenerate)
        if len(bad) and not skip_degenerate:
            raise DegenerateNeighborhoodError(
                f"{len(bad)} degenerate neighborhoods, first at point "
                f"{start + int(bad[0])}"
            )
        vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        vecs[bad] = 0.0
        normals[start:start + chunk] = vecs
        skipped.extend(start + bad)
    if skipped:
        logger.warning(
            "%d of %d points have collinear neighborhoods (first at point "
            "%d); they carry no normal", len(skipped), cloud.count,
            skipped[0],
        )
    logger.info("Estimated %d PCA normals (k=%d)",
                cloud.count - len(skipped), k)
    return normals


@dataclass(frozen=True)
class SamplerStats:
    """Proposal bookkeeping of one rejection-sampling call."""

    accepted: int
    proposed: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 1.0


def _rejection_sample(name, n, propose, accept, rng):
    if n <= 0:
        return np.zeros((0, 3)), SamplerStats(0, 0)
    kept = []
    accepted = proposed = 0
    while accepted < n:
        batch = max(2 * (n - accepted), MIN_PROPOSAL_BATCH)
        candidates = propose(batch, rng)
        mask = accept(candidates)
        proposed += batch
        hits = candidates[mask]
        kept.append(hits)
        accepted += len(hits)
        if proposed >= STARVATION_PROPOSALS and \
                accepted < MIN_ACCEPTANCE * proposed:
            raise SamplerStarvationError(name, accepted, proposed)
    points = np.vstack(kept)[:n]
    stats = SamplerStats(accepted, proposed)
    logger.debug("%s sampler: %d/%d accepted", name, accepted, proposed)
    return points, stats


def sample_near_band(index: NearestIndex, cloud: PointCloud, n: int,
                     delta: float, sigma: float, rng: np.random.Generator,
                     with_stats: bool = False):
    """
    Jitter input samples and keep those with 0 < d_X < delta inside the
    domain box.

    Args:
        index: Index over cloud
        cloud: Normalized point cloud
        n: Number of points to return
        delta: Band half-width
        sigma: Standard deviation of the isotropic Gaussian jitter
        rng: Random generator
        with_stats: Also return SamplerStats

    Returns:
        (n, 3) array, or (array, SamplerStats) when with_stats is set

    Raises:
        SamplerStarvationError: When fewer than 1% of proposals are kept
    """
    if delta <= 0 or sigma <= 0:
        raise MPFError("near-band sampling needs delta > 0 and sigma > 0")

    def propose(batch, gen):
        base = cloud.points[gen.integers(0, cloud.count, size=batch)]
        return base + gen.normal(0.0, sigma, size=(batch, 3))

    def accept(candidates):
        d = index.distances(candidates)
        inside = np.all(
            (candidates >= DOMAIN_LOW) & (candidates <= DOMAIN_HIGH), axis=1
        )
        return (d > 0.0) & (d < delta) & inside

    points, stats = _rejection_sample("near-band", n, propose, accept, rng)
    return (points, stats) if with_stats else points


def sample_far(index: NearestIndex, n: int, delta: float,
               rng: np.random.Generator, with_stats: bool = False):
    """
    Uniform samples over the domain box with d_X >= delta.

    Args:
        index: Index over the normalized cloud
        n: Number of points to return
        delta: Band half-width
        rng: Random generator
        with_stats: Also return SamplerStats

    Returns:
        (n, 3) array, or (array, SamplerStats) when with_stats is set

    Raises:
        SamplerStarvationError: When the shape fills the box
    """
    if delta <= 0:
        raise MPFError("far-field sampling needs delta > 0")

    def propose(batch, gen):
        return gen.uniform(DOMAIN_LOW, DOMAIN_HIGH, size=(batch, 3))

    def accept(candidates):
        return index.distances(candidates) >= delta

    points, stats = _rejection_sample("far-field", n, propose, accept, rng)
    return (points, stats) if with_stats else points


def sample_ambient(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples over the domain box (Laplacian regularization)."""
    return rng.uniform(DOMAIN_LOW, DOMAIN_HIGH, size=(max(n, 0), 3))


@dataclass
class SampleBatch:
    """Query points of one optimization step."""

    surface: np.ndarray
    near: np.ndarray
    far: np.ndarray
    ambient: np.ndarray
    delta: float
    surface_normals: Optional[np.ndarray] = None

    def check_membership(self, index: NearestIndex) -> bool:
        """True when every near / far point satisfies its band condition."""
        d_near = index.distances(self.near)
        d_far = index.distances(self.far)
        return bool(
            np.all((d_near > 0) & (d_near < self.delta))
            and np.all(d_far >= self.delta)
        )


def draw_batch(index: NearestIndex, cloud: PointCloud,
               normals: Optional[np.ndarray], surface: int, near: int,
               far: int, ambient: int, delta: float, sigma: float,
               rng: np.random.Generator) -> SampleBatch:
    """
    Draw a fresh SampleBatch.

    Args:
        index: Index over cloud
        cloud: Normalized point cloud
        normals: Cached unit normals aligned with cloud.points, or None
        surface: Surface sample count
        near: Near-band sample count
        far: Far-field sample count
        ambient: Ambient (Laplacian) sample count
        delta: Band half-width
        sigma: Near-band jitter
        rng: Random generator

    Returns:
        SampleBatch
    """
    pick = rng.integers(0, cloud.count, size=surface)
    return SampleBatch(
        surface=cloud.points[pick],
        surface_normals=None if normals is None else normals[pick],
        near=sample_near_band(index, cloud, near, delta, sigma, rng),
        far=sample_far(index, far, delta, rng),
        ambient=sample_ambient(ambient, rng),
        delta=delta,
    )
