"""
Tests for grid evaluation, mesh extraction, slices and probes.
"""

import numpy as np
import pytest
import torch
from scipy.interpolate import RegularGridInterpolator

from src.extraction import (
    ScalarGrid,
    SliceImage,
    evaluate_grid,
    extract_probe,
    grid_points,
    marching_cubes,
    parse_probe,
    read_ppm,
    render_slice,
    sign_changes,
    slice_points,
    write_ppm,
    write_slice,
)
from src.field import FieldConfig, init_params


def sphere_sdf(points):
    return np.linalg.norm(points, axis=1) - 0.5


@pytest.fixture
def small_field():
    return init_params(0, FieldConfig(hidden=16))


@pytest.fixture
def constant_field():
    """Field with r == 0 and theta == 0.2 everywhere, so phi == 0.2."""
    field = init_params(0, FieldConfig(hidden=16))
    with torch.no_grad():
        field.metric_head[1].weight.zero_()
        field.metric_head[1].bias.fill_(-20.0)
        field.phase_head[1].weight.zero_()
        field.phase_head[1].bias.fill_(0.2)
    return field


class TestGrid:
    """Test cases for dense grid sampling."""

    def test_grid_points_order(self):
        points = grid_points(3)

        assert points.shape == (27, 3)
        np.testing.assert_array_equal(points[0], [-1.0, -1.0, -1.0])
        np.testing.assert_array_equal(points[1], [-1.0, -1.0, 0.0])
        np.testing.assert_array_equal(points[-1], [1.0, 1.0, 1.0])

    def test_two_per_axis_is_corners(self, small_field):
        grid = evaluate_grid(small_field, 2)

        assert grid.resolution == (2, 2, 2)
        np.testing.assert_allclose(np.abs(grid.points()), 1.0)

    def test_grid_matches_pointwise(self, small_field):
        grid = evaluate_grid(small_field, 5, which="theta")
        direct = small_field.values(grid_points(5), which="theta")

        np.testing.assert_allclose(grid.values.ravel(), direct, rtol=0,
                                   atol=1e-13)

    def test_evaluated_one_slab_at_a_time(self, small_field, monkeypatch):
        sizes = []
        values = small_field.values

        def recording(x, which="phi"):
            sizes.append(len(x))
            return values(x, which=which)

        monkeypatch.setattr(small_field, "values", recording)
        evaluate_grid(small_field, (4, 5, 6))

        assert sizes == [30, 30, 30, 30]

    def test_metric_grid_non_negative(self, small_field):
        grid = evaluate_grid(small_field, 16, which="r")

        assert np.all(grid.values >= 0.0)

    def test_anisotropic_resolution(self, small_field):
        grid = evaluate_grid(small_field, (4, 5, 6))

        assert grid.values.shape == (4, 5, 6)
        np.testing.assert_allclose(grid.axis_coordinates(2),
                                   np.linspace(-1, 1, 6))

    def test_bad_resolution(self, small_field):
        with pytest.raises(ValueError, match=">= 2"):
            evaluate_grid(small_field, 1)


class TestMarchingCubes:
    """Test cases for zero-level surface extraction."""

    def test_sphere_vertices_near_surface(self):
        grid = ScalarGrid.from_function(sphere_sdf, 64)
        mesh = marching_cubes(grid)
        h = 2.0 / 63

        assert not mesh.is_empty
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert np.all(np.abs(radii - 0.5) <= 2 * h)
        mesh.validate()

    def test_plane(self):
        grid = ScalarGrid.from_function(lambda p: p[:, 2], 16)
        mesh = marching_cubes(grid)

        np.testing.assert_allclose(mesh.vertices[:, 2], 0.0, atol=1e-12)
        assert np.all(np.abs(mesh.vertices[:, :2]) <= 1.0 + 1e-12)

    def test_no_crossing_is_empty(self):
        grid = ScalarGrid.from_function(lambda p: 1.0 + p[:, 0] ** 2, 8)

        assert marching_cubes(grid).is_empty

    def test_vertices_on_interpolated_zero(self):
        grid = ScalarGrid.from_function(
            lambda p: np.linalg.norm(p - [0.1, -0.2, 0.05], axis=1) - 0.4, 24
        )
        mesh = marching_cubes(grid)
        interp = RegularGridInterpolator(
            [grid.axis_coordinates(i) for i in range(3)], grid.values,
            method="linear", bounds_error=False, fill_value=None,
        )

        assert np.max(np.abs(interp(mesh.vertices))) <= 1e-9

    def test_iso_value(self):
        grid = ScalarGrid.from_function(sphere_sdf, 32)
        mesh = marching_cubes(grid, iso=0.2)
        radii = np.linalg.norm(mesh.vertices, axis=1)

        assert np.median(radii) == pytest.approx(0.7, abs=2.0 / 31)


class TestSlices:
    """Test cases for slice rendering."""

    def test_slice_points_layout(self):
        points = slice_points("z", 0.25, 3)

        np.testing.assert_array_equal(points[:, 2], 0.25)
        np.testing.assert_array_equal(points[0], [-1.0, 1.0, 0.25])
        np.testing.assert_array_equal(points[2], [1.0, 1.0, 0.25])
        np.testing.assert_array_equal(points[-1], [1.0, -1.0, 0.25])

    def test_constant_positive_field_is_warm(self, constant_field):
        image = render_slice(constant_field, "y", 0.0, res=16)
        rgb = image.to_rgb()

        np.testing.assert_allclose(image.values, 0.2, rtol=1e-12)
        assert not image.zero_crossings().any()
        assert np.all(rgb[..., 0] > rgb[..., 2])

    def test_zero_crossings_marked(self):
        values = np.tile(np.linspace(-1, 1, 8), (8, 1))
        image = SliceImage(values, "z", 0.0)
        rgb = image.to_rgb()

        assert image.zero_crossings()[:, 3:5].all()
        assert (rgb[:, 3] == 0).all()

    @pytest.mark.parametrize("axis, offset", [("w", 0.0), ("x", 1.5)])
    def test_invalid_plane(self, small_field, axis, offset):
        with pytest.raises(ValueError):
            render_slice(small_field, axis, offset, res=8)

    def test_ppm_round_trip(self, tmp_path):
        rgb = np.random.default_rng(0).integers(0, 256, (5, 7, 3),
                                                dtype=np.uint8)
        path = str(tmp_path / "img.ppm")
        write_ppm(path, rgb)

        np.testing.assert_array_equal(read_ppm(path), rgb)

    def test_write_slice(self, small_field, tmp_path):
        image = render_slice(small_field, "x", 0.0, res=8)
        probe = extract_probe(small_field, [-1, 0, 0], [1, 0, 0], n=10)
        written = write_slice(str(tmp_path / "s"), image, probe)

        assert read_ppm(written["image"]).shape == (8, 8, 3)
        assert (tmp_path / "s.csv").exists()
        assert (tmp_path / "s_probe.csv").exists()


class TestProbe:
    """Test cases for line probes."""

    def test_probe_rows(self, small_field):
        probe = extract_probe(small_field, [0, 0, -1], [0, 0, 1], n=33)

        assert len(probe) == 33
        assert list(probe.columns) == ["t", "x", "y", "z", "value"]
        np.testing.assert_array_equal(probe["z"].iloc[[0, -1]], [-1.0, 1.0])

    def test_probe_too_short(self, small_field):
        with pytest.raises(ValueError):
            extract_probe(small_field, [0, 0, 0], [1, 0, 0], n=1)

    def test_parse_probe(self):
        start, end = parse_probe("0,0,-1:0,0.5,1")

        np.testing.assert_array_equal(start, [0, 0, -1])
        np.testing.assert_array_equal(end, [0, 0.5, 1])

    @pytest.mark.parametrize("text", ["0,0:1,1,1", "0,0,0", "a,b,c:1,1,1"])
    def test_parse_probe_malformed(self, text):
        with pytest.raises(ValueError):
            parse_probe(text)

    def test_sign_changes(self):
        assert sign_changes([1.0, 0.5, -0.2, -0.1, 0.3]) == 2
        assert sign_changes([1.0, 0.0, 1.0]) == 0
        assert sign_changes([]) == 0
