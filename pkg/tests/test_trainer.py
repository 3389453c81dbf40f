"""
Tests for the Adam update, checkpoints and the training loop.
"""

import os
from collections import OrderedDict

import joblib
import numpy as np
import pytest
import torch

import src.trainer as trainer_module
from src.data_generator import ShapeSampler
from src.errors import (
    CheckpointError,
    ShapeMismatchError,
    TrainingAbortedError,
)
from src.field import BETA_FLOOR, FieldConfig, init_params
from src.geometry_io import PointCloud
from src.losses import LossWeights
from src.trainer import (
    AdamState,
    FieldTrainer,
    TrainConfig,
    adam_step,
    load_checkpoint,
    make_rng,
    save_checkpoint,
    train,
)


def tiny_config(**overrides):
    """Small network and batches so each iteration runs in milliseconds."""
    options = dict(
        iterations=4,
        surface_batch=32,
        near_batch=32,
        far_batch=16,
        ambient_batch=8,
        log_every=1,
        checkpoint_every=0,
        field=FieldConfig(hidden=16),
    )
    options.update(overrides)
    return TrainConfig(**options)


@pytest.fixture
def sphere_cloud():
    return ShapeSampler(seed=0).sphere(n_points=500, radius=0.5)


def params_of(field):
    return OrderedDict(
        (k, p.detach().clone()) for k, p in field.named_parameters()
    )


def assert_same_params(a, b):
    pa, pb = params_of(a), params_of(b)
    assert list(pa) == list(pb)
    for name in pa:
        assert torch.equal(pa[name], pb[name]), name


class TestAdamStep:
    """Test cases for the bias-corrected Adam update."""

    @pytest.fixture
    def params(self):
        return OrderedDict([
            ("beta", torch.tensor(50.0, dtype=torch.float64)),
            ("w", torch.ones(3, 2, dtype=torch.float64)),
        ])

    def test_zero_gradient_leaves_params(self, params):
        before = {k: v.clone() for k, v in params.items()}
        state = AdamState.fresh(params)
        grads = {k: torch.zeros_like(v) for k, v in params.items()}
        adam_step(params, OrderedDict(grads), state, 1e-4, 1e-4)

        for k in params:
            assert torch.equal(params[k], before[k])
        assert state.step == 1

    def test_first_step_magnitude(self, params):
        state = AdamState.fresh(params)
        grads = OrderedDict((k, torch.ones_like(v)) for k, v in params.items())
        adam_step(params, grads, state, 1e-4, 1e-4)

        np.testing.assert_allclose(params["w"].numpy(), 1.0 - 1e-4,
                                   rtol=0, atol=1e-11)
        assert float(params["beta"]) == pytest.approx(50.0 - 1e-4, abs=1e-11)

    def test_separate_beta_learning_rate(self, params):
        state = AdamState.fresh(params)
        grads = OrderedDict((k, torch.ones_like(v)) for k, v in params.items())
        adam_step(params, grads, state, 1e-4, 1e-2)

        assert float(params["beta"]) == pytest.approx(50.0 - 1e-2, abs=1e-9)

    def test_beta_clamped(self):
        beta = torch.tensor(1e-3, dtype=torch.float64)
        params = OrderedDict([("beta", beta)])
        state = AdamState.fresh(params)
        grads = OrderedDict([("beta", torch.tensor(1.0, dtype=torch.float64))])
        adam_step(params, grads, state, 1e-4, 1.0)

        assert float(params["beta"]) == BETA_FLOOR

    def test_shape_mismatch(self, params):
        state = AdamState.fresh(params)
        grads = OrderedDict([
            ("beta", torch.tensor(0.0, dtype=torch.float64)),
            ("w", torch.zeros(2, 3, dtype=torch.float64)),
        ])

        with pytest.raises(ShapeMismatchError, match="'w'"):
            adam_step(params, grads, state, 1e-4, 1e-4)

    def test_missing_gradient(self, params):
        state = AdamState.fresh(params)

        with pytest.raises(ShapeMismatchError):
            adam_step(params, OrderedDict(), state, 1e-4, 1e-4)

    def test_state_dict_round_trip(self, params):
        state = AdamState.fresh(params)
        grads = OrderedDict((k, torch.full_like(v, 0.3))
                            for k, v in params.items())
        adam_step(params, grads, state, 1e-4, 1e-4)
        restored = AdamState.from_dict(state.to_dict())

        assert restored.step == 1
        for k in params:
            assert torch.equal(restored.m[k], state.m[k])
            assert torch.equal(restored.v[k], state.v[k])


class TestCheckpoint:
    """Test cases for checkpoint persistence."""

    def test_round_trip_is_bitwise(self, tmp_path):
        field = init_params(3, FieldConfig(hidden=8))
        state = AdamState.fresh(OrderedDict(field.named_parameters()))
        rng = make_rng(3)
        rng.uniform(size=10)
        path = str(tmp_path / "ckpt.joblib")
        save_checkpoint(path, field, state, iteration=7, rng=rng,
                        log_rows=[{"iteration": 0, "total": 1.0}])
        ckpt = load_checkpoint(path)

        assert_same_params(ckpt.field, field)
        assert ckpt.iteration == 7
        assert ckpt.log_rows == [{"iteration": 0, "total": 1.0}]
        restored = make_rng(0)
        restored.bit_generator.state = ckpt.rng_state
        np.testing.assert_array_equal(restored.uniform(size=5),
                                      rng.uniform(size=5))

    def test_truncated_file(self, tmp_path):
        field = init_params(0, FieldConfig(hidden=8))
        state = AdamState.fresh(OrderedDict(field.named_parameters()))
        path = tmp_path / "ckpt.joblib"
        save_checkpoint(str(path), field, state)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])

        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(str(tmp_path / "nope.joblib"))

    def test_foreign_file(self, tmp_path):
        path = str(tmp_path / "model.joblib")
        joblib.dump({"model": "something else"}, path)

        with pytest.raises(CheckpointError, match="not a field checkpoint"):
            load_checkpoint(path)


class TestFieldTrainer:
    """Test cases for the optimization loop."""

    def test_zero_iterations_returns_initial_field(self, sphere_cloud):
        field, log = train(sphere_cloud, tiny_config(iterations=0))

        assert_same_params(field, init_params(0, FieldConfig(hidden=16)))
        assert log.empty

    def test_deterministic(self, sphere_cloud):
        a, log_a = train(sphere_cloud, tiny_config())
        b, log_b = train(sphere_cloud, tiny_config())

        assert_same_params(a, b)
        assert log_a["total"].tolist() == log_b["total"].tolist()

    def test_independent_of_thread_count(self, sphere_cloud):
        config = tiny_config(iterations=5, surface_batch=256, near_batch=256,
                             far_batch=128, ambient_batch=64,
                             field=FieldConfig(hidden=64))
        previous = torch.get_num_threads()
        try:
            torch.set_num_threads(1)
            single, _ = train(sphere_cloud, config)
            torch.set_num_threads(4)
            multi, _ = train(sphere_cloud, config)
        finally:
            torch.set_num_threads(previous)

        assert_same_params(single, multi)

    def test_steps_run_single_threaded(self, sphere_cloud, monkeypatch):
        seen = []
        original = trainer_module.loss_param_gradients

        def recording(*args, **kwargs):
            seen.append(torch.get_num_threads())
            return original(*args, **kwargs)

        monkeypatch.setattr(trainer_module, "loss_param_gradients", recording)
        previous = torch.get_num_threads()
        try:
            torch.set_num_threads(3)
            train(sphere_cloud, tiny_config(iterations=2))
            after = torch.get_num_threads()
        finally:
            torch.set_num_threads(previous)

        assert seen == [1, 1]
        assert after == 3

    def test_log_values_read_without_grad_warnings(self, sphere_cloud,
                                                  recwarn):
        _, log = train(sphere_cloud, tiny_config(iterations=2))

        assert np.isfinite(log["beta"]).all()
        assert not [w for w in recwarn if "requires_grad" in str(w.message)]

    def test_log_columns_and_rows(self, sphere_cloud):
        _, log = train(sphere_cloud, tiny_config(iterations=5, log_every=2))

        assert log["iteration"].tolist() == [0, 2, 4]
        for column in ("raw_zero", "weighted_align", "total", "beta"):
            assert column in log.columns

    def test_last_iteration_always_logged(self, sphere_cloud):
        _, log = train(sphere_cloud, tiny_config(iterations=4, log_every=3))

        assert log["iteration"].tolist() == [0, 3]

    def test_alignment_gated_in_log(self, sphere_cloud):
        weights = LossWeights(align_start_iter=2)
        _, log = train(sphere_cloud, tiny_config(weights=weights))

        assert (log.loc[log["iteration"] < 2, "weighted_align"] == 0.0).all()
        assert (log.loc[log["iteration"] >= 2, "weighted_align"] > 0.0).all()

    def test_params_change(self, sphere_cloud):
        field, _ = train(sphere_cloud, tiny_config(iterations=2))
        initial = params_of(init_params(0, FieldConfig(hidden=16)))

        assert not torch.equal(params_of(field)["beta"], initial["beta"])

    def test_resume_matches_uninterrupted(self, sphere_cloud, tmp_path):
        full_dir = tmp_path / "full"
        part_dir = tmp_path / "part"
        full_dir.mkdir()
        part_dir.mkdir()

        full = FieldTrainer(tiny_config(iterations=6), str(full_dir))
        full_field, full_log = full.train(sphere_cloud)

        first = FieldTrainer(tiny_config(iterations=3, checkpoint_every=3),
                             str(part_dir))
        first.train(sphere_cloud)
        assert os.path.exists(first.checkpoint_path)

        second = FieldTrainer(tiny_config(iterations=6), str(part_dir))
        resumed_field, resumed_log = second.train(
            sphere_cloud, resume_from=first.checkpoint_path
        )

        assert_same_params(resumed_field, full_field)
        assert resumed_log["total"].tolist() == full_log["total"].tolist()

    def test_snapshots_written(self, sphere_cloud, tmp_path):
        cfg = tiny_config(iterations=3, snapshot_iters=[1, 3])
        trainer = FieldTrainer(cfg, str(tmp_path))
        trainer.train(sphere_cloud)

        assert (tmp_path / "snapshot_1.joblib").exists()
        assert (tmp_path / "snapshot_3.joblib").exists()
        assert load_checkpoint(str(tmp_path / "snapshot_1.joblib")).iteration \
            == 1

    def test_nan_beta_aborts(self, sphere_cloud, tmp_path):
        cfg = tiny_config(field=FieldConfig(hidden=16, beta_init=float("nan")))
        trainer = FieldTrainer(cfg, str(tmp_path))

        with pytest.raises(TrainingAbortedError) as info:
            trainer.train(sphere_cloud)
        assert info.value.iteration == 0
        assert not (tmp_path / "checkpoint.joblib").exists()

    def test_file_normals_used(self, sphere_cloud):
        trainer = FieldTrainer(tiny_config())

        assert trainer.surface_normals(sphere_cloud, None) is \
            sphere_cloud.normals

    def test_normals_skipped_when_disabled(self, sphere_cloud):
        trainer = FieldTrainer(tiny_config(weights=LossWeights(normal=0.0)))

        assert trainer.surface_normals(sphere_cloud, None) is None

    def test_collinear_points_without_normals(self):
        plate = ShapeSampler(seed=0).plate(n_points=300)
        t = np.linspace(-0.5, 0.5, 40)
        wire = np.column_stack(
            [t, np.full_like(t, 0.6), np.full_like(t, 0.4)]
        )
        cloud = PointCloud(np.vstack([plate.points, wire]))
        _, log = train(cloud, tiny_config(iterations=3))

        assert log["iteration"].tolist() == [0, 1, 2]
        assert np.isfinite(log["raw_normal"]).all()

    def test_invalid_config(self):
        with pytest.raises(ValueError, match="surface_batch"):
            FieldTrainer(tiny_config(surface_batch=0))
