"""
Tests for the phase sharpness sweep script.
"""

import json

import pandas as pd
import pytest

from scripts.beta_sweep import DEFAULT_BETAS, main, parse_args


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "train": {
            "surface_batch": 32,
            "near_batch": 32,
            "far_batch": 16,
            "ambient_batch": 8,
            "checkpoint_every": 0,
            "field": {"hidden": 16},
        },
        "extract": {"slice_res": 8},
    }))
    return str(path)


class TestBetaSweep:
    """Test cases for the beta sweep."""

    def test_defaults(self):
        args = parse_args([])

        assert args.betas == list(DEFAULT_BETAS)
        assert args.snapshots == [1000, 4000, 10000]
        assert args.input is None

    def test_summary_table(self, tiny_config, tmp_path, recwarn):
        out = tmp_path / "sweep"
        main(["--shape", "sphere", "--n-points", "200", "--betas", "1", "50",
              "--snapshots", "2", "1", "--res", "8", "--config", tiny_config,
              "--out", str(out)])

        table = pd.read_csv(out / "beta_sweep.csv")
        assert table["beta"].tolist() == [1.0, 1.0, 50.0, 50.0]
        assert table["iteration"].tolist() == [1, 2, 1, 2]
        assert table["learned_beta"].notna().all()
        assert not [w for w in recwarn if "requires_grad" in str(w.message)]
        for beta in ("1", "50"):
            run = out / f"beta_{beta}"
            assert (run / "snapshot_1.joblib").exists()
            assert (run / "slice_2.ppm").exists()
