"""Tests for cli.py — argument parsing, config routing and exit codes."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from securepose.cli import build_parser, config_from_args, main

TINY = {
    "sim": {
        "num_gops": 4,
        "gops_per_scene": 2,
        "gop_size": 2,
        "height": 16,
        "width": 16,
        "people": 1,
        "test_fraction": 0.5,
        "val_fraction": 0.0,
    },
    "pose_net": {"height": 16, "width": 16, "m": 2, "channels": 4, "head_channels": 4},
    "detector": {"height": 16, "width": 16, "m": 2},
}


@pytest.fixture
def tiny_config(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


class TestParser:
    def test_every_stage_is_a_command(self) -> None:
        parser = build_parser()
        for command in ("simulate", "train-pose", "train-detector", "detect", "localize"):
            assert parser.parse_args([command]).command == command

    def test_command_required(self) -> None:
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_verbose_and_quiet_exclusive(self) -> None:
        with pytest.raises(SystemExit):
            build_parser().parse_args(["simulate", "-v", "-q"])


class TestConfigFromArgs:
    def test_defaults(self) -> None:
        cfg = config_from_args(build_parser().parse_args(["simulate"]))
        assert cfg.out_dir == "runs/default"
        assert cfg.sim.people is None

    def test_overrides(self, tiny_config: Path) -> None:
        args = build_parser().parse_args(
            ["simulate", "-c", str(tiny_config), "-o", "runs/x", "--seed", "9", "--gops", "6"]
        )
        cfg = config_from_args(args)
        assert (cfg.out_dir, cfg.seed, cfg.sim.num_gops) == ("runs/x", 9, 6)
        assert cfg.sim.people == 1

    @pytest.mark.parametrize(
        "command,pose_epochs,detector_epochs",
        [("train-pose", 3, None), ("train-detector", None, 3)],
    )
    def test_epochs_target_the_trained_network(
        self, command: str, pose_epochs: int | None, detector_epochs: int | None
    ) -> None:
        defaults = config_from_args(build_parser().parse_args([command]))
        cfg = config_from_args(build_parser().parse_args([command, "--epochs", "3"]))
        assert cfg.pose_train.epochs == (pose_epochs or defaults.pose_train.epochs)
        assert cfg.detector_train.epochs == (detector_epochs or defaults.detector_train.epochs)

    def test_previews_flag(self) -> None:
        cfg = config_from_args(build_parser().parse_args(["localize", "--previews"]))
        assert cfg.eval.previews


class TestMain:
    def test_simulate(
        self, tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        out = tmp_path / "run"
        main(["simulate", "-c", str(tiny_config), "-o", str(out)])
        assert "Simulated 4 GOPs" in capsys.readouterr().out
        assert (out / "dataset" / "manifest.json").exists()

    def test_quiet_prints_nothing(
        self, tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        main(["simulate", "-c", str(tiny_config), "-o", str(tmp_path / "run"), "-q"])
        assert capsys.readouterr().out == ""

    def test_missing_stage_input(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["detect", "-o", str(tmp_path), "-q"])
        assert exc.value.code == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR:")
        assert "simulate" in err

    def test_bad_config(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sim": {"colour": "red"}}))
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "-c", str(path)])
        assert exc.value.code == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path: Path) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "-c", str(tmp_path / "nope.json")])
        assert exc.value.code == 1

    def test_invalid_override(self, capsys: pytest.CaptureFixture[str]) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--people", "7"])
        assert exc.value.code == 1
        assert "ERROR:" in capsys.readouterr().err
