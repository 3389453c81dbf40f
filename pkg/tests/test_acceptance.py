"""
End-to-end reconstructions on the sphere and thin-plate fixtures.

These train full-size fields for thousands of iterations on the CPU and are
deselected by default; run them with ``pytest -m slow``.
"""

import numpy as np
import pytest

from src.config import RunConfig, apply_overrides
from src.data_generator import ShapeSampler
from src.extraction import extract_probe, sign_changes
from src.geometry_io import PointCloud
from src.main import run_reconstruction
from src.metrics import chamfer, eikonal_residual_stats, sample_surface
from src.spatial import NearestIndex, build_index, sample_near_band
from src.trainer import make_rng

pytestmark = pytest.mark.slow

RES = 128


@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    cloud = ShapeSampler(seed=0).sphere(n_points=5000, radius=0.5)
    config = apply_overrides(RunConfig(), [
        ("train.iterations", 5000), ("extract.res", RES),
    ])
    run_dir = str(tmp_path_factory.mktemp("sphere"))
    return cloud, run_reconstruction(cloud, config, run_dir)


@pytest.fixture(scope="module")
def plate_run(tmp_path_factory):
    cloud = ShapeSampler(seed=0).plate(n_points=5000, half_size=0.5)
    config = apply_overrides(RunConfig(), [
        ("train.iterations", 5000), ("extract.res", RES),
    ])
    run_dir = str(tmp_path_factory.mktemp("plate"))
    return cloud, run_reconstruction(cloud, config, run_dir)


class TestSphere:
    """Sphere of radius 0.5 under the default configuration."""

    def test_zero_level_on_held_out_points(self, sphere_run):
        _, result = sphere_run
        held_out = ShapeSampler(seed=99).sphere(n_points=1000, radius=0.5)
        phi = result.field.values(result.transform.apply(held_out.points))

        assert np.mean(np.abs(phi)) < 5e-3

    def test_mesh_chamfer(self, sphere_run):
        _, result = sphere_run
        truth = ShapeSampler(seed=7).sphere(n_points=100_000, radius=0.5)

        assert not result.mesh.is_empty
        pred = sample_surface(result.mesh, 100_000, seed=0)
        assert chamfer(pred, truth.points) < 5.0

    def test_band_eikonal_residual(self, sphere_run):
        cloud, result = sphere_run
        normalized = PointCloud(result.transform.apply(cloud.points))
        index = build_index(normalized)
        band = sample_near_band(index, normalized, 1000, 0.05, 0.025,
                                make_rng(1))

        assert eikonal_residual_stats(result.field, band)["mean"] < 0.1


class TestThinPlate:
    """Single-layer square sheet: open surface captured as a thin shell."""

    def test_probe_crosses_zero_near_sheet(self, plate_run):
        _, result = plate_run
        delta = 0.05
        probe = extract_probe(result.field, [0.0, 0.0, -4 * delta],
                              [0.0, 0.0, 4 * delta], n=400)

        assert sign_changes(probe["value"]) >= 1

    def test_no_missing_sheet(self, plate_run):
        cloud, result = plate_run
        spacing = 2.0 / (RES - 1) / result.transform.scale

        assert not result.mesh.is_empty
        dist = NearestIndex(result.mesh.vertices).distances(cloud.points)
        assert np.all(dist <= 2 * spacing)
