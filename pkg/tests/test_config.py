"""
Tests for run configuration parsing and overrides.
"""

import json

import pytest

from src.config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    echo_config,
    load_config,
    parse_override_args,
)
from src.errors import ConfigError


class TestLoadConfig:
    """Test cases for reading JSON configurations."""

    def test_defaults(self):
        config = load_config()

        assert config.train.iterations == 10000
        assert config.train.weights.align == 0.7
        assert config.train.weights.align_start_iter == 3000
        assert config.train.field.beta_init == 50.0
        assert config.extract.res == 128
        assert config.train.sigma == pytest.approx(0.025)

    def test_partial_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({
            "train": {"iterations": 50, "weights": {"lap": 0.001}},
            "extract": {"res": 64},
        }))
        config = load_config(str(path))

        assert config.train.iterations == 50
        assert config.train.weights.lap == 0.001
        assert config.train.weights.zero == 1.0
        assert config.extract.res == 64

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="train.weights.lapl"):
            config_from_dict({"train": {"weights": {"lapl": 0.1}}})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="train.iterations"):
            config_from_dict({"train": {"iterations": "many"}})

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"delta": True}})

    def test_int_accepted_for_float(self):
        config = config_from_dict({"train": {"delta": 1}})

        assert config.train.delta == 1.0
        assert isinstance(config.train.delta, float)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError, match="far"):
            config_from_dict({"train": {"weights": {"far": -1.0}}})

    def test_bad_extract_field(self):
        with pytest.raises(ConfigError, match="extract.field"):
            config_from_dict({"extract": {"field": "P"}})

    def test_bad_composition(self):
        with pytest.raises(ConfigError, match="composition"):
            config_from_dict({"train": {"field": {"composition": "sum"}}})

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")

        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "none.json"))


class TestOverrides:
    """Test cases for dotted command-line overrides."""

    def test_parse_space_and_equals(self):
        pairs = parse_override_args(
            ["--train.iterations", "20", "--extract.field=r"]
        )

        assert pairs == [("train.iterations", 20), ("extract.field", "r")]

    def test_parse_json_values(self):
        pairs = parse_override_args(["--train.snapshot_iters", "[1, 2]",
                                     "--train.jitter", "null"])

        assert pairs == [("train.snapshot_iters", [1, 2]),
                         ("train.jitter", None)]

    def test_parse_rejects_plain_option(self):
        with pytest.raises(ConfigError, match="unrecognized"):
            parse_override_args(["--verbose"])

    def test_parse_missing_value(self):
        with pytest.raises(ConfigError, match="needs a value"):
            parse_override_args(["--train.iterations"])

    def test_apply_nested(self):
        config = apply_overrides(RunConfig(), [("train.weights.lap", 0.0)])

        assert config.train.weights.lap == 0.0

    def test_shorthands(self):
        config = apply_overrides(RunConfig(), [
            ("weights.normal", 0), ("field.beta_init", 100),
        ])

        assert config.train.weights.normal == 0.0
        assert config.train.field.beta_init == 100.0

    def test_original_untouched(self):
        base = RunConfig()
        apply_overrides(base, [("train.iterations", 5)])

        assert base.train.iterations == 10000

    def test_unknown_path(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_overrides(RunConfig(), [("train.itterations", 5)])

    def test_override_validated(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), [("extract.res", 1)])


def test_echo_round_trip(tmp_path):
    config = apply_overrides(RunConfig(), [
        ("train.iterations", 7), ("weights.phase", 0.02),
        ("train.snapshot_iters", [2, 4]),
    ])
    path = echo_config(config, str(tmp_path / "run"))

    assert load_config(path) == config
