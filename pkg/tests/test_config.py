"""Tests for config.py — JSON loading, validation and CLI overrides."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from securepose.config import (
    ConfigError,
    DetectorConfig,
    PipelineConfig,
    apply_overrides,
    config_from_dict,
    config_to_json_dict,
    load_config,
    write_effective_config,
)


class TestDefaults:
    def test_none_gives_defaults(self) -> None:
        cfg = load_config(None)
        assert cfg == PipelineConfig()
        assert cfg.sim.gop_size == 12
        assert cfg.preprocess.f == 9
        assert cfg.pose_train.epochs == 15
        assert cfg.pose_train.optim.lr == pytest.approx(1e-5)
        assert cfg.detector_train.batch_size == 32
        assert cfg.localizer.tau == pytest.approx(0.1)

    def test_empty_object_is_valid(self) -> None:
        assert config_from_dict({}) == PipelineConfig()

    def test_detector_channels(self) -> None:
        assert DetectorConfig().in_channels == 24
        assert DetectorConfig(pool_size=1).in_channels == 2 * 12 * 14
        assert DetectorConfig(pool_size=7).groups == 2


class TestFromDict:
    def test_partial_sections_merge_with_defaults(self) -> None:
        cfg = config_from_dict({"pose_train": {"optim": {"lr": 1e-3}}, "sim": {"people": 2}})
        assert cfg.pose_train.optim.lr == pytest.approx(1e-3)
        assert cfg.pose_train.epochs == 15
        assert cfg.pose_train.optim.momentum == pytest.approx(0.9)
        assert cfg.sim.people == 2
        assert cfg.sim.num_gops == 600

    def test_lists_become_tuples(self) -> None:
        cfg = config_from_dict({"sim": {"environments": ["corridor"]}})
        assert cfg.sim.environments == ("corridor",)

    @pytest.mark.parametrize(
        "data",
        [
            {"sedd": 1},
            {"sim": {"gop": 12}},
            {"pose_train": {"optim": {"learning_rate": 0.1}}},
        ],
    )
    def test_unknown_keys(self, data: dict[str, object]) -> None:
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict(data)

    @pytest.mark.parametrize(
        "data",
        [
            {"workers": 0},
            {"sim": {"people": 5}},
            {"sim": {"environments": ["basement"]}},
            {"sim": {"environments": "office_a"}},
            {"sim": "office_a"},
            {"pose_train": {"optim": {"lr": -1.0}}},
            {"detector": {"pool_size": 5}},
            {"localizer": {"window": 4}},
            {"eval": {"pck_thresholds": [0.1, 1.5]}},
            {"pose_net": {"projector_layers": 4}},
        ],
    )
    def test_invalid_values(self, data: dict[str, object]) -> None:
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_gop_size_must_match_networks(self) -> None:
        with pytest.raises(ConfigError, match="pose_net"):
            config_from_dict({"sim": {"gop_size": 8}})
        cfg = config_from_dict(
            {"sim": {"gop_size": 8}, "pose_net": {"m": 8}, "detector": {"m": 8}}
        )
        assert cfg.pose_net.m == 8

    def test_window_length_must_match(self) -> None:
        with pytest.raises(ConfigError, match="preprocess.f"):
            config_from_dict({"preprocess": {"f": 5}})

    def test_image_size_must_match(self) -> None:
        with pytest.raises(ConfigError):
            config_from_dict({"sim": {"height": 32, "width": 32}})
        cfg = config_from_dict(
            {
                "sim": {"height": 32, "width": 32},
                "pose_net": {"height": 32, "width": 32},
                "detector": {"height": 32, "width": 32},
            }
        )
        assert cfg.detector.height == 32


# ============================================================
# Files and overrides
# ============================================================


class TestLoad:
    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.json"
        path.write_text("{sim: 1}")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_effective_config_round_trip(self, tmp_path: Path) -> None:
        cfg = config_from_dict({"seed": 7, "sim": {"people": 3, "environments": ["corridor"]}})
        path = write_effective_config(cfg, tmp_path / "run")
        assert path.name == "config.json"
        assert load_config(path) == cfg

    def test_json_keys_are_snake_case(self) -> None:
        data = config_to_json_dict(PipelineConfig())
        assert data["sim"]["num_gops"] == 600
        assert data["pose_train"]["optim"]["lr_decay_period"] == 5
        assert data["loss_weights"]["lambda2"] == pytest.approx(0.3)
        json.dumps(data)


class TestOverrides:
    def test_dotted_paths(self) -> None:
        cfg = apply_overrides(
            PipelineConfig(), {"seed": 3, "sim.people": 1, "pose_train.optim.lr": 0.01}
        )
        assert cfg.seed == 3
        assert cfg.sim.people == 1
        assert cfg.pose_train.optim.lr == pytest.approx(0.01)

    def test_none_is_skipped(self) -> None:
        base = config_from_dict({"sim": {"people": 2}})
        assert apply_overrides(base, {"sim.people": None, "seed": None}) == base

    def test_overrides_win_over_file(self, tmp_path: Path) -> None:
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sim": {"num_gops": 40}}))
        cfg = apply_overrides(load_config(path), {"sim.num_gops": 20})
        assert cfg.sim.num_gops == 20

    @pytest.mark.parametrize("key", ["simm.people", "sim.persons", "seed.value"])
    def test_unknown_override(self, key: str) -> None:
        with pytest.raises(ConfigError, match="unknown config"):
            apply_overrides(PipelineConfig(), {key: 1})

    def test_override_is_validated(self) -> None:
        with pytest.raises(ConfigError):
            apply_overrides(PipelineConfig(), {"workers": 0})
