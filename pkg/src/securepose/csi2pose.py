"""CSI2Pose: RF frames to wireless JHM/PAF tensors.

The network has three stages, all operating on the M frames of one GOP
(frames form the batch axis of the 2D layers):

  1. Projector. Each `(Nt*Nr, K, F)` RF frame is read as Nt*Nr channels
     of K x F planes, bilinearly resized to the image size, then passed
     through six 3x3 convolutions (the first two stride 2) and six
     residual blocks. Output `(M, H/4, W/4, channels)`.
  2. Refiner. The M feature maps are stacked along time and passed
     through two 3D convolutions with a ReLU between them (temporal kernel
     3, edge-replicated in time, zero-padded in space). The output is the
     second convolution, unrectified. Disabled when `use_refiner` is off.
  3. Generators. Two independent heads upsample back to `(H, W)`: two
     3x3 convs, two (bilinear x2 + 3x3 conv) stages, then a 1x1 conv to
     14 JHM channels or 2*13 PAF channels. PAF channel `xy * 13 + c`
     becomes component `xy` of limb `c`.

Training minimises the weighted cross-modal loss between these outputs
and the visual oracle's JHM/PAF tensors, one GOP per step.

Checkpoints are `.spt` tensor containers (parameters plus batch-norm
running statistics) with a JSON sidecar holding the architecture.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray

from securepose.config import ConfigError, PoseNetConfig, TrainConfig
from securepose.numcore import (
    ParamSet,
    Tensor,
    add,
    add_bias,
    batch_norm,
    bilinear_resize,
    bilinear_upsample2x,
    conv2d,
    conv3d,
    he_uniform,
    pad,
    relu,
    reshape,
    reverse_grad,
    rmsprop_step,
    scheduled_lr,
    transpose,
)
from securepose.pose_features import (
    NUM_KEYPOINTS,
    NUM_LIMBS,
    CrossModalPair,
    LossWeights,
    total_cross_modal_loss,
)
from securepose.tensor_file import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

Mode = Literal["train", "infer"]

__all__ = [
    "PoseModel",
    "PoseNetConfig",
    "TrainingLog",
    "generate",
    "init_pose_model",
    "load_pose_model",
    "predict_pose",
    "project",
    "refine",
    "save_pose_model",
    "train_pose",
]


# ============================================================
# Model
# ============================================================


@dataclass
class PoseModel:
    config: PoseNetConfig
    params: ParamSet

    def submodule_names(self, prefix: str) -> list[str]:
        return [n for n in self.params.names() if n.startswith(prefix + ".")]


def _conv_params(
    params: ParamSet, rng: np.random.Generator, name: str, shape: tuple[int, ...], *, bias: bool
) -> None:
    fan_in = int(np.prod(shape[:-1]))
    params.add(f"{name}.w", he_uniform(rng, shape, fan_in))
    if bias:
        params.add(f"{name}.b", np.zeros(shape[-1]))


def init_pose_model(config: PoseNetConfig, seed: int = 0) -> PoseModel:
    """Fresh model: He-uniform kernels, zero biases, BN gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    p = ParamSet()
    c = config.channels
    cin = config.links
    for i in range(config.projector_layers):
        _conv_params(p, rng, f"projector.conv{i + 1}", (3, 3, cin, c), bias=False)
        p.add_batch_norm(f"projector.bn{i + 1}", c)
        cin = c
    for i in range(config.residual_blocks):
        for part in ("a", "b"):
            _conv_params(p, rng, f"projector.res{i + 1}.conv_{part}", (3, 3, c, c), bias=False)
            p.add_batch_norm(f"projector.res{i + 1}.bn_{part}", c)
    if config.use_refiner:
        kt = config.refiner_kernel_t
        for i in (1, 2):
            _conv_params(p, rng, f"refiner.conv{i}", (kt, 3, 3, c, c), bias=True)
    for head, out_channels in (("jhm_head", NUM_KEYPOINTS), ("paf_head", 2 * NUM_LIMBS)):
        hc = config.head_channels
        _conv_params(p, rng, f"{head}.conv1", (3, 3, c, c), bias=True)
        _conv_params(p, rng, f"{head}.conv2", (3, 3, c, c), bias=True)
        _conv_params(p, rng, f"{head}.up1", (3, 3, c, hc), bias=True)
        _conv_params(p, rng, f"{head}.up2", (3, 3, hc, hc), bias=True)
        # Small output layer so untrained predictions start near zero.
        p.add(f"{head}.out.w", 0.1 * he_uniform(rng, (1, 1, hc, out_channels), hc))
        p.add(f"{head}.out.b", np.zeros(out_channels))
    return PoseModel(config=config, params=p)


def _conv_bn_relu(
    model: PoseModel, x: Tensor, conv: str, bn: str, stride: int, mode: Mode, *, act: bool = True
) -> Tensor:
    p = model.params
    y = conv2d(x, p[f"{conv}.w"], stride=stride, padding=1)
    y = batch_norm(y, p[f"{bn}.gamma"], p[f"{bn}.beta"], mode, stats=p.bn_stats[bn])
    return relu(y) if act else y


def _conv_relu(
    model: PoseModel, x: Tensor, name: str, *, padding: int = 1, act: bool = True
) -> Tensor:
    p = model.params
    y = add_bias(conv2d(x, p[f"{name}.w"], stride=1, padding=padding), p[f"{name}.b"])
    return relu(y) if act else y


# ============================================================
# Stages
# ============================================================


def rf_to_planes(rf_frames: NDArray[np.floating] | Tensor) -> Tensor:
    """`(M, Nt*Nr, K, F)` to channels-last planes `(M, K, F, Nt*Nr)`."""
    x = rf_frames if isinstance(rf_frames, Tensor) else Tensor(np.asarray(rf_frames, np.float32))
    if x.ndim != 4:
        raise ValueError(f"expected (M, links, K, F) RF frames, got shape {x.shape}")
    return transpose(x, (0, 2, 3, 1))


def project(
    model: PoseModel, rf_frames: NDArray[np.floating] | Tensor, mode: Mode = "infer"
) -> Tensor:
    """RF frames to `(M, H/4, W/4, channels)` feature maps."""
    cfg = model.config
    planes = rf_to_planes(rf_frames)
    if planes.shape[-1] != cfg.links or planes.shape[1:3] != (cfg.subcarriers, cfg.f):
        raise ValueError(
            f"RF frames {planes.shape[1:]} do not match (K={cfg.subcarriers}, F={cfg.f}, "
            f"links={cfg.links})"
        )
    x = bilinear_resize(planes, cfg.height, cfg.width)
    for i in range(cfg.projector_layers):
        stride = 2 if i < 2 else 1
        x = _conv_bn_relu(model, x, f"projector.conv{i + 1}", f"projector.bn{i + 1}", stride, mode)
    for i in range(cfg.residual_blocks):
        name = f"projector.res{i + 1}"
        h = _conv_bn_relu(model, x, f"{name}.conv_a", f"{name}.bn_a", 1, mode)
        h = _conv_bn_relu(model, h, f"{name}.conv_b", f"{name}.bn_b", 1, mode, act=False)
        x = relu(add(x, h))
    return x


def refine(model: PoseModel, features: Tensor) -> Tensor:
    """Temporal 3D-conv refinement of `(M, h, w, channels)`; shape preserved."""
    cfg = model.config
    if not cfg.use_refiner:
        return features
    m = features.shape[0]
    if m == 1:
        logger.warning("refining a single-frame sequence; the temporal kernel sees one frame")
    p = model.params
    half_t = cfg.refiner_kernel_t // 2
    x = features
    for i in (1, 2):
        padded = pad(x, [(half_t, half_t), (0, 0), (0, 0), (0, 0)], mode="edge")
        padded = pad(padded, [(0, 0), (1, 1), (1, 1), (0, 0)])
        x = add_bias(conv3d(padded, p[f"refiner.conv{i}.w"]), p[f"refiner.conv{i}.b"])
        if i == 1:
            x = relu(x)
    return x


def _head(model: PoseModel, x: Tensor, head: str) -> Tensor:
    y = _conv_relu(model, x, f"{head}.conv1")
    y = _conv_relu(model, y, f"{head}.conv2")
    y = _conv_relu(model, bilinear_upsample2x(y), f"{head}.up1")
    y = _conv_relu(model, bilinear_upsample2x(y), f"{head}.up2")
    return _conv_relu(model, y, f"{head}.out", padding=0, act=False)


def generate(model: PoseModel, refined: Tensor) -> tuple[Tensor, Tensor]:
    """Wireless JHMs `(M, H, W, 14)` and PAFs `(M, H, W, 2, 13)`."""
    cfg = model.config
    expected = (cfg.height // 4, cfg.width // 4, cfg.channels)
    if refined.shape[1:] != expected:
        raise ValueError(f"refined maps {refined.shape[1:]} do not match {expected}")
    s_r = _head(model, refined, "jhm_head")
    paf = _head(model, refined, "paf_head")
    l_r = reshape(paf, (*paf.shape[:-1], 2, NUM_LIMBS))
    return s_r, l_r


def forward(
    model: PoseModel, rf_frames: NDArray[np.floating] | Tensor, mode: Mode = "infer"
) -> tuple[Tensor, Tensor]:
    """Full CSI2Pose pass over one GOP."""
    return generate(model, refine(model, project(model, rf_frames, mode)))


def predict_pose(
    model: PoseModel, rf_frames: NDArray[np.floating]
) -> tuple[NDArray[np.float32], NDArray[np.float32]]:
    """Frozen-model inference; returns plain arrays."""
    s_r, l_r = forward(model, rf_frames, "infer")
    return s_r.numpy().astype(np.float32), l_r.numpy().astype(np.float32)


# ============================================================
# Training
# ============================================================


@dataclass(frozen=True)
class PoseTrainingItem:
    """One training GOP: RF frames and the visual oracle's features."""

    rf_frames: NDArray[np.float32]
    jhm: NDArray[np.float32]
    paf: NDArray[np.float32]


@dataclass
class TrainingLog:
    """Per-epoch mean losses; `val_loss` is empty without a validation set."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "trainLoss": self.train_loss,
            "valLoss": self.val_loss,
            "learningRates": self.learning_rates,
            "seconds": self.seconds,
        }


def gop_loss(
    model: PoseModel, item: PoseTrainingItem, weights: LossWeights, mode: Mode
) -> Tensor:
    s_r, l_r = forward(model, item.rf_frames, mode)
    pair = CrossModalPair(s_i=item.jhm, s_r=s_r, l_i=item.paf, l_r=l_r)
    return total_cross_modal_loss([pair], weights)


def evaluate_pose_loss(
    model: PoseModel, items: Sequence[PoseTrainingItem], weights: LossWeights
) -> float:
    if not items:
        raise ValueError("evaluate_pose_loss needs at least one GOP")
    return float(np.mean([gop_loss(model, item, weights, "infer").item() for item in items]))


def train_pose(
    items: Sequence[PoseTrainingItem],
    config: PoseNetConfig,
    train: TrainConfig,
    *,
    weights: LossWeights | None = None,
    val_items: Sequence[PoseTrainingItem] = (),
    seed: int = 0,
    model: PoseModel | None = None,
) -> tuple[PoseModel, TrainingLog]:
    """Cross-modal training on authentic GOPs, one GOP per RMSprop step."""
    if not items:
        raise ConfigError("train_pose needs at least one authentic GOP")
    weights = weights or LossWeights()
    if model is None:
        model = init_pose_model(config, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    log = TrainingLog()
    for epoch in range(train.epochs):
        lr = scheduled_lr(train.optim, epoch)
        started = time.perf_counter()
        losses = []
        for idx in rng.permutation(len(items)):
            loss = gop_loss(model, items[int(idx)], weights, "train")
            grads = reverse_grad(loss, model.params)
            rmsprop_step(model.params, grads, train.optim, lr)
            losses.append(loss.item())
        log.train_loss.append(float(np.mean(losses)))
        log.learning_rates.append(lr)
        if val_items:
            log.val_loss.append(evaluate_pose_loss(model, val_items, weights))
        log.seconds.append(time.perf_counter() - started)
        logger.info(
            "pose epoch %d/%d lr=%.2e train_loss=%.4f%s",
            epoch + 1,
            train.epochs,
            lr,
            log.train_loss[-1],
            f" val_loss={log.val_loss[-1]:.4f}" if val_items else "",
        )
    return model, log


# ============================================================
# Checkpoints
# ============================================================


CHECKPOINT_KIND = "csi2pose"


def save_pose_model(path: Path, model: PoseModel) -> Path:
    return save_checkpoint(
        path, CHECKPOINT_KIND, dataclasses.asdict(model.config), model.params.state_arrays()
    )


def load_pose_model(path: Path) -> PoseModel:
    config, tensors = load_checkpoint(path, CHECKPOINT_KIND)
    model = init_pose_model(PoseNetConfig(**config))
    model.params.load_state_arrays(tensors)
    return model
