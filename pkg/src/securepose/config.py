"""Pipeline configuration: a tree of frozen dataclasses loaded from JSON.

Every section has defaults, so an empty `{}` file (or no file at all) is a
valid configuration. Section and field names in the JSON mirror the
dataclass fields in snake_case:

    {
      "seed": 7,
      "sim": {"num_gops": 600, "people": null},
      "pose_train": {"epochs": 15, "optim": {"lr": 1e-05}},
      "detector": {"pool_size": 14}
    }

Unknown keys are rejected so typos fail loudly. CLI flags are applied on
top with `apply_overrides` (flags win), and the effective configuration is
written next to every artifact as `config.json`.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from securepose.channel import ENVIRONMENTS
from securepose.numcore import OptimConfig
from securepose.pose_features import NUM_KEYPOINTS, LossWeights
from securepose.scene_sim import MAX_PEOPLE
from securepose.tensor_file import atomic_write_text


class ConfigError(ValueError):
    """Invalid configuration or a training set the configuration cannot use."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


# ============================================================
# Sections
# ============================================================


@dataclass(frozen=True)
class SimConfig:
    """Synthetic dataset generation."""

    num_gops: int = 600
    people: int | None = None  # None draws 0..4 per scene
    gops_per_scene: int = 10
    gop_size: int = 12
    fps: float = 7.5
    csi_rate_hz: float = 100.0
    environments: tuple[str, ...] = ("office_a", "office_b", "corridor")
    forged_fraction: float = 0.5
    test_fraction: float = 0.3
    val_fraction: float = 0.1
    timestamp_jitter: float = 0.2
    packet_drop: float = 0.02
    height: int = 64
    width: int = 64
    sigma: float = 1.5
    limb_width: float = 1.5
    store_visual_tensors: bool = True

    def __post_init__(self) -> None:
        if self.num_gops < 1 or self.gops_per_scene < 1 or self.gop_size < 1:
            raise ConfigError("num_gops, gops_per_scene and gop_size must be >= 1")
        if self.people is not None and not 0 <= self.people <= MAX_PEOPLE:
            raise ConfigError(f"sim.people must be in [0, {MAX_PEOPLE}] or null")
        if self.fps <= 0 or self.csi_rate_hz <= 0:
            raise ConfigError("sim.fps and sim.csi_rate_hz must be > 0")
        unknown = [e for e in self.environments if e not in ENVIRONMENTS]
        if not self.environments or unknown:
            raise ConfigError(f"sim.environments must name presets from {sorted(ENVIRONMENTS)}")
        for name in ("forged_fraction", "test_fraction", "val_fraction"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"sim.{name} must be in [0, 1)")
        if not 0 <= self.timestamp_jitter < 0.5 or not 0 <= self.packet_drop < 1:
            raise ConfigError("sim.timestamp_jitter must be in [0, 0.5), packet_drop in [0, 1)")
        if self.sigma <= 0 or self.limb_width <= 0:
            raise ConfigError("sim.sigma and sim.limb_width must be > 0")


@dataclass(frozen=True)
class PreprocessConfig:
    """Alignment and denoising of the raw CSI stream."""

    f: int = 9
    cutoff_hz: float = 60.0
    order: int = 4

    def __post_init__(self) -> None:
        if self.f < 1 or self.order < 1 or self.cutoff_hz <= 0:
            raise ConfigError("preprocess.f and order must be >= 1, cutoff_hz > 0")


@dataclass(frozen=True)
class PoseNetConfig:
    """CSI2Pose architecture.

    `channels` is the feature-map width everywhere between the first
    projector conv and the generators; `head_channels` is used by the two
    full-resolution head convs.
    """

    height: int = 64
    width: int = 64
    channels: int = 32
    head_channels: int = 16
    f: int = 9
    m: int = 12
    links: int = 9
    subcarriers: int = 30
    projector_layers: int = 6
    residual_blocks: int = 6
    refiner_kernel_t: int = 3
    use_refiner: bool = True

    def __post_init__(self) -> None:
        for name in ("height", "width"):
            size = getattr(self, name)
            if size < 16 or not _is_power_of_two(size):
                raise ConfigError(f"pose_net.{name} must be a power of two >= 16, got {size}")
        if self.projector_layers != 6 or self.residual_blocks != 6:
            raise ConfigError("CSI2Pose uses exactly six projector convs and six residual blocks")
        if self.refiner_kernel_t < 1 or self.refiner_kernel_t % 2 == 0:
            raise ConfigError("pose_net.refiner_kernel_t must be odd and >= 1")
        for name in ("channels", "head_channels", "f", "m", "links", "subcarriers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"pose_net.{name} must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    optim: OptimConfig

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


def _pose_train() -> TrainConfig:
    return TrainConfig(epochs=15, batch_size=1, optim=OptimConfig(lr=1e-5))


def _detector_train() -> TrainConfig:
    return TrainConfig(epochs=5, batch_size=32, optim=OptimConfig(lr=1e-4))


@dataclass(frozen=True)
class DetectorConfig:
    """Detection network. `pool_size` channels are max-pooled into one plane."""

    height: int = 64
    width: int = 64
    m: int = 12
    j: int = NUM_KEYPOINTS
    pool_size: int = NUM_KEYPOINTS
    conv1: int = 64
    conv2: int = 32
    kernel: int = 5
    stride: int = 2
    fc1: int = 672
    fc2: int = 256
    theta: float = 1e-3

    def __post_init__(self) -> None:
        if self.pool_size < 1 or self.j % self.pool_size:
            raise ConfigError(f"detector.pool_size must divide {self.j}, got {self.pool_size}")
        if self.theta < 0:
            raise ConfigError("detector.theta must be >= 0")
        side = min(self.height, self.width)
        for _ in range(2):
            side = (side - self.kernel) // self.stride + 1
        if side < 1:
            raise ConfigError("detector input too small for two strided convolutions")

    @property
    def groups(self) -> int:
        return self.j // self.pool_size

    @property
    def in_channels(self) -> int:
        return 2 * self.m * self.groups


@dataclass(frozen=True)
class LocalizerConfig:
    tau: float = 0.1
    window: int = 5
    samples: int = 10
    s_min: float = 0.05
    positive_fraction: float = 0.8
    min_keypoints: int = 3
    box_padding: float = 0.1

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError("localizer.window must be odd and >= 3")
        if self.tau <= 0:
            raise ConfigError("localizer.tau must be > 0")
        if self.samples < 2:
            raise ConfigError("localizer.samples must be >= 2")
        if not 0 < self.positive_fraction <= 1:
            raise ConfigError("localizer.positive_fraction must be in (0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    pck_thresholds: tuple[float, ...] = (0.05, 0.1, 0.25, 0.5)
    bench_gops: int = 5
    previews: bool = False

    def __post_init__(self) -> None:
        if not all(0 < r < 1 for r in self.pck_thresholds):
            raise ConfigError("eval.pck_thresholds must lie in (0, 1)")
        if self.bench_gops < 1:
            raise ConfigError("eval.bench_gops must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    pose_net: PoseNetConfig = field(default_factory=PoseNetConfig)
    pose_train: TrainConfig = field(default_factory=_pose_train)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    detector_train: TrainConfig = field(default_factory=_detector_train)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        sim, net, det = self.sim, self.pose_net, self.detector
        if (net.height, net.width, net.m) != (sim.height, sim.width, sim.gop_size):
            raise ConfigError("pose_net image size and m must match the simulated dataset")
        if net.f != self.preprocess.f:
            raise ConfigError("pose_net.f must equal preprocess.f")
        if (det.height, det.width, det.m) != (sim.height, sim.width, sim.gop_size):
            raise ConfigError("detector image size and m must match the simulated dataset")


# ============================================================
# JSON loading
# ============================================================


def _build(cls: type[Any], data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    defaults = cls() if cls is not TrainConfig else None
    for name, value in data.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            base = getattr(defaults, name) if defaults is not None else None
            merged = _deep_merge(_to_plain(base) if base is not None else {}, value)
            kwargs[name] = _build(hint, merged, path)
        elif typing.get_origin(hint) is tuple:
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        if defaults is None:
            return cls(**kwargs)
        return dataclasses.replace(defaults, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def _deep_merge(base: dict[str, Any], update: Any) -> Any:
    if not isinstance(update, dict):
        return update
    out = dict(base)
    for key, value in update.items():
        if isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "")
    assert isinstance(cfg, PipelineConfig)
    return cfg


def load_config(path: Path | None) -> PipelineConfig:
    """Load a JSON config; `None` gives the defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)


def config_to_json_dict(cfg: PipelineConfig) -> dict[str, Any]:
    plain = _to_plain(cfg)
    assert isinstance(plain, dict)
    return plain


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Apply dotted-path overrides such as `{"sim.people": 3}`; `None` values are skipped."""
    data = config_to_json_dict(cfg)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section in override {dotted!r}")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key in override {dotted!r}")
        node[leaf] = value
    return config_from_dict(data)


def write_effective_config(cfg: PipelineConfig, directory: Path) -> Path:
    return atomic_write_text(
        Path(directory) / "config.json", json.dumps(config_to_json_dict(cfg), indent=2) + "\n"
    )
