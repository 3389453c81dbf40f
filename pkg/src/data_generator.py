"""
Synthetic point cloud fixtures for tests, demos and acceptance runs.

Every shape takes a ``noise`` level: isotropic Gaussian jitter whose standard
deviation is that fraction of the clean sampling's bounding-box diagonal
(0.005 is 0.5 %). Normals stay those of the clean surface.
"""

import numpy as np

from src.geometry_io import PointCloud

SHAPES = ("sphere", "plate", "shell", "cube-sheet")


class ShapeSampler:
    """Generate seeded point samplings of simple analytic shapes."""

    def __init__(self, seed=42):
        """
        Initialize the sampler.

        Args:
            seed: Random seed for reproducibility
        """
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def _jitter(self, points, noise):
        if noise < 0:
            raise ValueError(f"noise must be >= 0, got {noise}")
        if noise == 0 or len(points) == 0:
            return points
        diagonal = np.linalg.norm(points.max(axis=0) - points.min(axis=0))
        return points + self.rng.normal(0.0, noise * diagonal, points.shape)

    def sphere(self, n_points=5000, radius=0.5, center=(0.0, 0.0, 0.0),
               noise=0.0):
        """
        Sample a sphere surface uniformly.

        Args:
            n_points: Number of samples
            radius: Sphere radius
            center: Sphere center
            noise: Jitter as a fraction of the bounding-box diagonal

        Returns:
            PointCloud with outward unit normals
        """
        directions = self.rng.normal(size=(n_points, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        points = np.asarray(center) + radius * directions
        return PointCloud(self._jitter(points, noise), directions)

    def plate(self, n_points=5000, half_size=0.5, noise=0.0):
        """
        Sample a single-layer square sheet in the plane z = 0.

        Args:
            n_points: Number of samples
            half_size: Half edge length of the square
            noise: Jitter as a fraction of the bounding-box diagonal

        Returns:
            PointCloud with normals (0, 0, 1)
        """
        xy = self.rng.uniform(-half_size, half_size, size=(n_points, 2))
        points = np.column_stack([xy, np.zeros(n_points)])
        normals = np.tile([0.0, 0.0, 1.0], (n_points, 1))
        return PointCloud(self._jitter(points, noise), normals)

    def shell(self, n_points=5000, half_size=0.5, gap=0.04, noise=0.0):
        """
        Sample two parallel sheets ``gap`` apart (a thin-shell sampling).

        Args:
            n_points: Total number of samples, split between both sheets
            half_size: Half edge length of each square
            gap: Distance between the sheets
            noise: Jitter as a fraction of the bounding-box diagonal

        Returns:
            PointCloud with normals facing away from the mid-plane
        """
        if gap <= 0:
            raise ValueError(f"gap must be > 0, got {gap}")
        xy = self.rng.uniform(-half_size, half_size, size=(n_points, 2))
        side = np.where(np.arange(n_points) % 2 == 0, 1.0, -1.0)
        points = np.column_stack([xy, side * gap / 2.0])
        normals = np.column_stack(
            [np.zeros(n_points), np.zeros(n_points), side]
        )
        return PointCloud(self._jitter(points, noise), normals)

    def cube_and_sheet(self, n_points=8000, half_size=0.3,
                       cube_center=(0.0, 0.0, -0.2), sheet_height=0.5,
                       noise=0.0):
        """
        Sample a closed cube with an open sheet standing on its top face.

        The cube is watertight; the sheet lies in the plane x = 0, spans the
        cube's width in y and ends in a free boundary edge at the top.

        Args:
            n_points: Total number of samples, split by surface area
            half_size: Half edge length of the cube
            cube_center: Cube center
            sheet_height: Height of the sheet above the top face
            noise: Jitter as a fraction of the bounding-box diagonal

        Returns:
            PointCloud with face normals
        """
        c = np.asarray(cube_center, dtype=np.float64)
        cube_area = 6 * (2 * half_size) ** 2
        sheet_area = (2 * half_size) * sheet_height
        n_sheet = int(round(n_points * sheet_area / (cube_area + sheet_area)))
        n_cube = n_points - n_sheet

        face = self.rng.integers(0, 6, size=n_cube)
        uv = self.rng.uniform(-half_size, half_size, size=(n_cube, 2))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        cube_pts = np.zeros((n_cube, 3))
        cube_nrm = np.zeros((n_cube, 3))
        for a in range(3):
            mask = axis == a
            others = [b for b in range(3) if b != a]
            cube_pts[mask, a] = sign[mask] * half_size
            cube_pts[mask, others[0]] = uv[mask, 0]
            cube_pts[mask, others[1]] = uv[mask, 1]
            cube_nrm[mask, a] = sign[mask]
        cube_pts += c

        top = c[2] + half_size
        y = self.rng.uniform(c[1] - half_size, c[1] + half_size, size=n_sheet)
        z = self.rng.uniform(top, top + sheet_height, size=n_sheet)
        sheet_pts = np.column_stack([np.full(n_sheet, c[0]), y, z])
        sheet_nrm = np.tile([1.0, 0.0, 0.0], (n_sheet, 1))

        return PointCloud(
            self._jitter(np.vstack([cube_pts, sheet_pts]), noise),
            np.vstack([cube_nrm, sheet_nrm]),
        )

    def generate(self, shape, n_points, noise=0.0, gap=None):
        """
        Dispatch on a shape name from SHAPES.

        Args:
            shape: One of SHAPES
            n_points: Number of samples
            noise: Jitter as a fraction of the bounding-box diagonal
            gap: Sheet distance; only the shell takes one

        Returns:
            PointCloud
        """
        if gap is not None and shape != "shell":
            raise ValueError(f"gap applies to 'shell' only, not '{shape}'")
        if shape == "sphere":
            return self.sphere(n_points, noise=noise)
        if shape == "plate":
            return self.plate(n_points, noise=noise)
        if shape == "shell":
            if gap is None:
                return self.shell(n_points, noise=noise)
            return self.shell(n_points, gap=gap, noise=noise)
        if shape == "cube-sheet":
            return self.cube_and_sheet(n_points, noise=noise)
        raise ValueError(f"Unknown shape '{shape}' (expected one of {SHAPES})")
