"""
Tests for synthetic shape fixtures.
"""

import numpy as np
import pytest

from src.data_generator import SHAPES, ShapeSampler


class TestShapeSampler:
    """Test cases for ShapeSampler class."""

    def test_sphere_on_surface(self):
        cloud = ShapeSampler(seed=42).sphere(n_points=1000, radius=0.5)

        assert cloud.count == 1000
        np.testing.assert_allclose(
            np.linalg.norm(cloud.points, axis=1), 0.5, atol=1e-12
        )
        np.testing.assert_allclose(cloud.normals, cloud.points / 0.5,
                                   atol=1e-12)

    def test_plate_is_flat(self):
        cloud = ShapeSampler(seed=1).plate(n_points=500, half_size=0.4)

        assert np.all(cloud.points[:, 2] == 0.0)
        assert np.all(np.abs(cloud.points[:, :2]) <= 0.4)
        np.testing.assert_array_equal(cloud.normals[:, 2], 1.0)

    def test_shell_has_two_sheets(self):
        cloud = ShapeSampler(seed=1).shell(n_points=400, gap=0.04)

        assert set(np.round(cloud.points[:, 2], 12)) == {-0.02, 0.02}

    def test_cube_and_sheet(self):
        cloud = ShapeSampler(seed=3).cube_and_sheet(
            n_points=2000, half_size=0.3, cube_center=(0.0, 0.0, -0.2),
            sheet_height=0.5,
        )
        pts = cloud.points
        on_sheet = (pts[:, 2] > 0.1 + 1e-9)

        assert cloud.count == 2000
        assert on_sheet.any()
        np.testing.assert_array_equal(pts[on_sheet, 0], 0.0)
        assert pts[:, 2].max() <= 0.6 + 1e-12
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0)

    def test_same_seed_same_points(self):
        a = ShapeSampler(seed=5).generate("sphere", 100)
        b = ShapeSampler(seed=5).generate("sphere", 100)

        np.testing.assert_array_equal(a.points, b.points)

    @pytest.mark.parametrize("shape", SHAPES)
    def test_generate_every_shape(self, shape):
        cloud = ShapeSampler(seed=0).generate(shape, 300)

        assert cloud.count == 300
        assert cloud.has_normals

    @pytest.mark.parametrize("shape", SHAPES)
    def test_noise_on_every_shape(self, shape):
        clean = ShapeSampler(seed=2).generate(shape, 2000)
        noisy = ShapeSampler(seed=2).generate(shape, 2000, noise=0.01)
        diagonal = np.linalg.norm(
            clean.points.max(axis=0) - clean.points.min(axis=0)
        )
        offsets = noisy.points - clean.points

        assert np.std(offsets) == pytest.approx(0.01 * diagonal, rel=0.05)
        np.testing.assert_array_equal(noisy.normals, clean.normals)

    def test_zero_noise_is_clean(self):
        a = ShapeSampler(seed=2).generate("cube-sheet", 500)
        b = ShapeSampler(seed=2).generate("cube-sheet", 500, noise=0.0)

        np.testing.assert_array_equal(a.points, b.points)

    def test_negative_noise(self):
        with pytest.raises(ValueError, match="noise"):
            ShapeSampler().sphere(10, noise=-1.0)

    def test_shell_gap(self):
        cloud = ShapeSampler(seed=1).generate("shell", 100, gap=0.2)

        np.testing.assert_allclose(np.abs(cloud.points[:, 2]), 0.1)

    def test_gap_only_for_shell(self):
        with pytest.raises(ValueError, match="shell"):
            ShapeSampler().generate("sphere", 10, gap=0.1)

    def test_unknown_shape(self):
        with pytest.raises(ValueError, match="Unknown shape"):
            ShapeSampler().generate("torus", 10)
