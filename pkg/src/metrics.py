"""
Reconstruction quality metrics: Chamfer distance, point-to-surface distance
and Eikonal residuals. Distances are reported scaled by 10^3.
"""

import logging
from typing import Dict, Optional

import numpy as np

from src.errors import EmptyInputError
from src.field import MetricPhaseField, evaluate_jet
from src.geometry_io import TriangleMesh
from src.spatial import NearestIndex

logger = logging.getLogger(__name__)

DISTANCE_SCALE = 1e3
DEFAULT_SURFACE_SAMPLES = 100_000
DEFAULT_P2S_POINTS = 1000
# Point x triangle pairs processed per block in point_to_surface.
PAIR_BLOCK = 250_000


def _as_points(points, name: str) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInputError(f"{name} is empty")
    return points


def chamfer(a, b) -> float:
    """
    Symmetric Chamfer distance between two point sets, scaled by 10^3.

    Mean of unsquared nearest-neighbor distances in both directions,
    averaged.

    Args:
        a: (N, 3) points
        b: (M, 3) points

    Returns:
        Scaled distance; chamfer(a, b) == chamfer(b, a)

    Raises:
        EmptyInputError: When either set is empty
    """
    a = _as_points(a, "first point set")
    b = _as_points(b, "second point set")
    a_to_b = NearestIndex(b).distances(a).mean()
    b_to_a = NearestIndex(a).distances(b).mean()
    return float(DISTANCE_SCALE * 0.5 * (a_to_b + b_to_a))


def _dot(u, v):
    return np.einsum("...i,...i->...", u, v)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                                c: np.ndarray) -> np.ndarray:
    """
    Closest point on each triangle (a, b, c) to each query p.

    Inputs broadcast against each other; the Voronoi regions of the three
    vertices, three edges and the face are tested in turn.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        denom = np.where(denom == 0.0, 1.0, denom)
        v = vb / denom
        w = vc / denom

    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    shape = np.broadcast(p, a).shape
    choices = [
        np.broadcast_to(a, shape),
        np.broadcast_to(b, shape),
        a + t_ab[..., None] * ab,
        np.broadcast_to(c, shape),
        a + t_ac[..., None] * ac,
        b + t_bc[..., None] * (c - b),
    ]
    face = a + v[..., None] * ab + w[..., None] * ac
    cond = [np.broadcast_to(m[..., None], shape) for m in conditions]
    return np.select(cond, choices, default=face)


def point_distances_to_mesh(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact (unscaled) distance from each point to the nearest triangle."""
    points = _as_points(points, "query points")
    if mesh.is_empty:
        raise EmptyInputError("mesh has no triangles")
    tri = mesh.vertices[mesh.triangles]
    a, b, c = (tri[None, :, i, :] for i in range(3))
    block = max(1, PAIR_BLOCK // len(tri))
    out = np.empty(len(points))
    for start in range(0, len(points), block):
        p = points[start:start + block, None, :]
        closest = closest_points_on_triangles(p, a, b, c)
        sq = np.sum((closest - p) ** 2, axis=-1)
        out[start:start + block] = np.sqrt(sq.min(axis=1))
    return out


def point_to_surface(points, mesh: TriangleMesh) -> float:
    """
    Mean point-to-triangle distance, scaled by 10^3.

    Raises:
        EmptyInputError: On empty points or an empty mesh
    """
    return float(DISTANCE_SCALE * point_distances_to_mesh(points, mesh).mean())


def sample_surface(mesh: TriangleMesh, n: int = DEFAULT_SURFACE_SAMPLES,
                   seed: int = 0) -> np.ndarray:
    """
    Uniform area-weighted samples on a triangle mesh.

    Args:
        mesh: Non-empty mesh
        n: Number of samples
        seed: Random seed

    Returns:
        (n, 3) points
    """
    if mesh.is_empty:
        raise EmptyInputError("cannot sample an empty mesh")
    tri = mesh.vertices[mesh.triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
    )
    total = areas.sum()
    if total <= 0:
        raise EmptyInputError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(tri), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    w0, w1, w2 = 1.0 - su, su * (1.0 - v), su * v
    t = tri[pick]
    return (w0[:, None] * t[:, 0] + w1[:, None] * t[:, 1]
            + w2[:, None] * t[:, 2])


def mesh_chamfer(mesh_a: TriangleMesh, mesh_b: TriangleMesh,
                 n: int = DEFAULT_SURFACE_SAMPLES, seed: int = 0) -> float:
    """Chamfer distance between area-weighted samplings of two meshes."""
    return chamfer(sample_surface(mesh_a, n, seed),
                   sample_surface(mesh_b, n, seed))


def residual_stats(gradients) -> Dict[str, float]:
    """Mean and max of | |g| - 1 | over a batch of gradient vectors."""
    gradients = np.asarray(gradients, dtype=np.float64).reshape(-1, 3)
    if len(gradients) == 0:
        raise EmptyInputError("no gradients to summarize")
    residual = np.abs(np.linalg.norm(gradients, axis=1) - 1.0)
    return {"mean": float(residual.mean()), "max": float(residual.max())}


def eikonal_residual_stats(field: MetricPhaseField,
                           points) -> Dict[str, float]:
    """
    Eikonal residual of the metric field r over band points.

    Args:
        field: Trained field
        points: (N, 3) near-band points

    Returns:
        Dict with 'mean' and 'max' of | |grad r| - 1 |
    """
    points = _as_points(points, "band points")
    jet = evaluate_jet(field, points, laplacian=False)
    return residual_stats(jet.grad_r.numpy())


class SurfaceEvaluator:
    """Score reconstructions against a fixed reference sampling."""

    def __init__(self, reference, samples: int = DEFAULT_SURFACE_SAMPLES,
                 seed: int = 0, p2s_points: int = DEFAULT_P2S_POINTS):
        """
        Args:
            reference: (N, 3) reference points or a TriangleMesh
            samples: Surface samples drawn from meshes
            seed: Sampling seed
            p2s_points: Reference points used for point-to-surface
        """
        self.samples = samples
        self.seed = seed
        self.p2s_points = p2s_points
        if isinstance(reference, TriangleMesh):
            self.reference_mesh: Optional[TriangleMesh] = reference
            self.reference = sample_surface(reference, samples, seed)
        else:
            self.reference_mesh = None
            self.reference = _as_points(reference, "reference")

    def evaluate(self, mesh: TriangleMesh) -> Dict[str, float]:
        """
        Chamfer and point-to-surface of a reconstructed mesh.

        Returns:
            Dict with 'chamfer' and 'p2s'; both NaN for an empty mesh
        """
        if mesh.is_empty:
            logger.warning("Reconstruction is empty; metrics set to NaN")
            return {"chamfer": float("nan"), "p2s": float("nan")}
        pred = sample_surface(mesh, self.samples, self.seed)
        return {
            "chamfer": chamfer(pred, self.reference),
            "p2s": point_to_surface(self._p2s_subset(), mesh),
        }

    def _p2s_subset(self) -> np.ndarray:
        if len(self.reference) <= self.p2s_points:
            return self.reference
        rng = np.random.default_rng(self.seed)
        pick = rng.choice(len(self.reference), self.p2s_points, replace=False)
        return self.reference[np.sort(pick)]
