from __future__ import annotations

import numpy as np
import pytest

from tactile_transformer.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from tactile_transformer.config import (
    ConfigError,
    ExperimentConfig,
    default_config,
    load_config,
    save_config,
)


class TestConfig:
    def test_round_trip_identity(self):
        config = default_config()
        again = ExperimentConfig.from_yaml(config.to_yaml())
        assert again == config
        assert ExperimentConfig.from_yaml(again.to_yaml()) == config

    def test_file_round_trip(self, tmp_path):
        config = default_config()
        path = tmp_path / "config.yaml"
        save_config(config, path)
        assert load_config(path) == config

    def test_empty_document_gives_defaults(self):
        assert ExperimentConfig.from_yaml("") == default_config()

    def test_unknown_field_reports_path(self):
        with pytest.raises(ConfigError, match="pretrain.ratio_x"):
            ExperimentConfig.from_dict({"pretrain": {"ratio_x": 0.5}})
        with pytest.raises(ConfigError, match="data.synthetic.blobs"):
            ExperimentConfig.from_dict({"data": {"synthetic": {"blobs": 2}}})

    def test_type_error_reports_path(self):
        with pytest.raises(ConfigError, match="encoder.dim"):
            ExperimentConfig.from_dict({"encoder": {"dim": "big"}})
        with pytest.raises(ConfigError, match="pretrain.beta"):
            ExperimentConfig.from_dict({"pretrain": {"beta": "one"}})

    def test_value_validation_reports_path(self):
        with pytest.raises(ConfigError, match="mask_ratio"):
            ExperimentConfig.from_dict({"pretrain": {"mask_ratio": 1.5}})
        with pytest.raises(ConfigError, match="beta"):
            ExperimentConfig.from_dict({"pretrain": {"beta": -1.0}})

    def test_cross_field_divisibility_checked(self):
        with pytest.raises(ConfigError, match="divisible"):
            ExperimentConfig.from_dict({"data": {"synthetic": {"frames": 21}}})

    def test_manifest_source_requires_paths(self):
        with pytest.raises(ConfigError, match="manifest"):
            ExperimentConfig.from_dict({"data": {"source": "manifest"}})

    def test_seed_override_via_replace(self):
        from dataclasses import replace

        config = replace(default_config(), seed=42)
        assert config.seed == 42 and default_config().seed == 0


class TestCheckpoint:
    def make(self, seed=0) -> Checkpoint:
        rng = np.random.default_rng(seed)
        return Checkpoint(
            stage="pretrain",
            epoch=3,
            config=default_config().to_dict(),
            params={"b.w": rng.standard_normal((3, 2)), "a.v": rng.standard_normal(4)},
            optimizer_t=17,
            optimizer_slots={"m::a.v": np.ones(4), "v::a.v": np.full(4, 0.5)},
            rng={"seed": 0},
            extra={"note": 1},
        )

    def test_round_trip(self, tmp_path):
        ckpt = self.make()
        path = save_checkpoint(tmp_path / "x.ckpt", ckpt)
        back = load_checkpoint(path)
        assert back.stage == "pretrain" and back.epoch == 3 and back.optimizer_t == 17
        assert set(back.params) == {"b.w", "a.v"}
        np.testing.assert_array_equal(back.params["b.w"], ckpt.params["b.w"])
        np.testing.assert_array_equal(back.optimizer_slots["v::a.v"], ckpt.optimizer_slots["v::a.v"])
        assert back.config == ckpt.config and back.extra == {"note": 1}

    def test_identical_state_identical_bytes(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", self.make())
        save_checkpoint(tmp_path / "b.ckpt", self.make())
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPTxxxxxxxxxxxx")
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = save_checkpoint(tmp_path / "x.ckpt", self.make())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_corrupt_header_rejected(self, tmp_path):
        path = save_checkpoint(tmp_path / "x.ckpt", self.make())
        raw = bytearray(path.read_bytes())
        raw[30] = 0xFF  # stomp on the JSON header
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.ckpt")
