"""GOP-level forgery detection from paired visual / wireless JHMs.

A GOP's M visual JHMs and M wireless JHMs are first compacted: each
`(H, W, J)` map is max-pooled over channel groups of `pool_size`
(the default pools all 14 keypoints into one plane) and the planes are
stacked frame by frame, visual first, into one `(H, W, 2*M*groups)`
tensor. The detection network then maps that tensor to a score in
[-1, 1]:

    conv(64, k5, s2) - ReLU - conv(32, k5, s2) - ReLU - flatten
    - dense(672) - ReLU - dense(256) - ReLU - dense(1) - tanh

A score above zero means "forged". Training minimises the batch hinge
loss plus a squared-L2 penalty on the weight kernels.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from securepose.config import ConfigError, DetectorConfig, TrainConfig
from securepose.csi2pose import TrainingLog
from securepose.numcore import (
    ParamSet,
    Tensor,
    add_bias,
    conv2d,
    dense,
    he_uniform,
    mul,
    relu,
    reshape,
    reverse_grad,
    rmsprop_step,
    scheduled_lr,
    square,
    sub,
    sum_all,
    tanh,
)
from securepose.tensor_file import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

AUTHENTIC = -1
FORGED = 1

__all__ = [
    "AUTHENTIC",
    "FORGED",
    "Decision",
    "DetectorConfig",
    "DetectorModel",
    "compact_jhms",
    "decide",
    "detect",
    "detect_batch",
    "flops",
    "hinge_loss",
    "init_detector",
    "load_detector",
    "save_detector",
    "train_detector",
]


# ============================================================
# Compaction
# ============================================================


def compact_jhms(
    s_i: NDArray[np.floating], s_r: NDArray[np.floating], pool_size: int | None = None
) -> NDArray[np.float32]:
    """Pool `(M, H, W, J)` visual and wireless JHMs into `(H, W, 2*M*groups)`.

    Channel `m * groups + g` of each half is the max over keypoint
    channels `[g * pool_size, (g + 1) * pool_size)` of frame m.
    """
    s_i = np.asarray(s_i)
    s_r = np.asarray(s_r)
    if s_i.shape != s_r.shape:
        raise ValueError(f"visual JHMs {s_i.shape} and wireless JHMs {s_r.shape} differ")
    if s_i.ndim != 4:
        raise ValueError(f"expected (M, H, W, J) JHM sequences, got shape {s_i.shape}")
    m, h, w, j = s_i.shape
    pool = j if pool_size is None else pool_size
    if pool < 1 or j % pool:
        raise ValueError(f"pool size {pool} does not divide {j} keypoint channels")
    groups = j // pool

    def pooled(x: NDArray[np.floating]) -> NDArray[np.floating]:
        maxed = x.reshape(m, h, w, groups, pool).max(axis=-1)
        return maxed.transpose(1, 2, 0, 3).reshape(h, w, m * groups)

    return np.concatenate([pooled(s_i), pooled(s_r)], axis=-1).astype(np.float32)


# ============================================================
# Model
# ============================================================


@dataclass
class DetectorModel:
    config: DetectorConfig
    params: ParamSet

    def parameter_count(self) -> int:
        return self.params.parameter_count()


@dataclass(frozen=True)
class Decision:
    score: float
    label: int

    @property
    def forged(self) -> bool:
        return self.label == FORGED


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def feature_shape(config: DetectorConfig) -> tuple[int, int, int]:
    """Spatial shape after both strided convs."""
    h, w = config.height, config.width
    for _ in range(2):
        h = _conv_out(h, config.kernel, config.stride)
        w = _conv_out(w, config.kernel, config.stride)
    return h, w, config.conv2


def flatten_size(config: DetectorConfig) -> int:
    return int(np.prod(feature_shape(config)))


def init_detector(
    config: DetectorConfig, seed: int = 0, *, zero_output: bool = False
) -> DetectorModel:
    rng = np.random.default_rng(seed)
    p = ParamSet()
    k = config.kernel
    cin = config.in_channels
    p.add("conv1.w", he_uniform(rng, (k, k, cin, config.conv1), k * k * cin))
    p.add("conv1.b", np.zeros(config.conv1))
    p.add("conv2.w", he_uniform(rng, (k, k, config.conv1, config.conv2), k * k * config.conv1))
    p.add("conv2.b", np.zeros(config.conv2))
    widths = [flatten_size(config), config.fc1, config.fc2]
    for i, (n_in, n_out) in enumerate(zip(widths, widths[1:], strict=False), start=1):
        p.add(f"fc{i}.w", he_uniform(rng, (n_in, n_out), n_in))
        p.add(f"fc{i}.b", np.zeros(n_out))
    out_w = he_uniform(rng, (config.fc2, 1), config.fc2)
    if zero_output:
        out_w = np.zeros_like(out_w)
    p.add("out.w", out_w)
    p.add("out.b", np.zeros(1))
    return DetectorModel(config=config, params=p)


def forward(model: DetectorModel, x: Tensor) -> Tensor:
    """Scores `(N,)` for a batch `(N, H, W, C)` of compacted tensors."""
    cfg = model.config
    expected = (cfg.height, cfg.width, cfg.in_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"detector input {x.shape} does not match (N, {expected})")
    p = model.params
    y = relu(add_bias(conv2d(x, p["conv1.w"], stride=cfg.stride), p["conv1.b"]))
    y = relu(add_bias(conv2d(y, p["conv2.w"], stride=cfg.stride), p["conv2.b"]))
    y = reshape(y, (x.shape[0], flatten_size(cfg)))
    y = relu(dense(y, p["fc1.w"], p["fc1.b"]))
    y = relu(dense(y, p["fc2.w"], p["fc2.b"]))
    s = tanh(dense(y, p["out.w"], p["out.b"]))
    return reshape(s, (x.shape[0],))


def detect_batch(model: DetectorModel, compacted: NDArray[np.floating]) -> NDArray[np.float64]:
    x = np.asarray(compacted, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    return forward(model, Tensor(x)).numpy().astype(np.float64)


def detect(model: DetectorModel, compacted: NDArray[np.floating]) -> float:
    """Forgery score in [-1, 1] for one compacted GOP."""
    arr = np.asarray(compacted)
    if arr.ndim != 3:
        raise ValueError(f"detect takes one (H, W, C) tensor, got shape {arr.shape}")
    return float(detect_batch(model, arr)[0])


def decide(score: float) -> Decision:
    """Threshold at zero; a tie is authentic."""
    if not np.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    return Decision(score=float(score), label=FORGED if score > 0 else AUTHENTIC)


def flops(config: DetectorConfig) -> int:
    """Floating-point operations of one forward pass (a multiply-add is two)."""
    k2 = config.kernel**2
    h1 = _conv_out(config.height, config.kernel, config.stride)
    w1 = _conv_out(config.width, config.kernel, config.stride)
    h2, w2, _ = feature_shape(config)
    macs = h1 * w1 * config.conv1 * k2 * config.in_channels
    macs += h2 * w2 * config.conv2 * k2 * config.conv1
    macs += flatten_size(config) * config.fc1 + config.fc1 * config.fc2 + config.fc2
    return 2 * macs


# ============================================================
# Training
# ============================================================


def hinge_loss(scores: Tensor, labels: NDArray[np.integer]) -> Tensor:
    """Mean of `max(0, 1 - z * s)` over the batch."""
    z = np.asarray(labels, dtype=scores.numpy().dtype)
    if z.shape != scores.shape:
        raise ValueError(f"labels {z.shape} do not match scores {scores.shape}")
    margins = relu(sub(1.0, mul(scores, z)))
    return mul(sum_all(margins), 1.0 / z.size)


def regularized_loss(
    model: DetectorModel, scores: Tensor, labels: NDArray[np.integer]
) -> Tensor:
    """Hinge loss plus `theta / (2 Y) * sum(w ** 2)` over the weight kernels."""
    loss = hinge_loss(scores, labels)
    theta = model.config.theta
    if theta == 0:
        return loss
    penalty: Tensor | None = None
    for name in model.params.names():
        if name.endswith(".w"):
            term = sum_all(square(model.params[name]))
            penalty = term if penalty is None else penalty + term
    assert penalty is not None
    return loss + mul(penalty, theta / (2 * scores.shape[0]))


def train_detector(
    samples: NDArray[np.floating],
    labels: Sequence[int] | NDArray[np.integer],
    config: DetectorConfig,
    train: TrainConfig,
    *,
    seed: int = 0,
    model: DetectorModel | None = None,
) -> tuple[DetectorModel, TrainingLog]:
    """Mini-batch RMSprop on compacted GOPs labelled -1 (authentic) / +1 (forged)."""
    x = np.asarray(samples, dtype=np.float32)
    z = np.asarray(labels, dtype=np.int64)
    if x.ndim != 4 or len(x) != len(z):
        raise ValueError(f"expected (N, H, W, C) samples with N labels, got {x.shape} / {z.shape}")
    if not set(np.unique(z).tolist()) <= {AUTHENTIC, FORGED}:
        raise ValueError("detector labels must be -1 or +1")
    if len(np.unique(z)) < 2:
        raise ConfigError("detector training needs both authentic and forged GOPs")
    if model is None:
        model = init_detector(config, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    log = TrainingLog()
    for epoch in range(train.epochs):
        lr = scheduled_lr(train.optim, epoch)
        started = time.perf_counter()
        order = rng.permutation(len(x))
        losses = []
        for begin in range(0, len(order), train.batch_size):
            batch = order[begin : begin + train.batch_size]
            scores = forward(model, Tensor(x[batch]))
            loss = regularized_loss(model, scores, z[batch])
            rmsprop_step(model.params, reverse_grad(loss, model.params), train.optim, lr)
            losses.append(loss.item() * len(batch))
        log.train_loss.append(float(np.sum(losses) / len(x)))
        log.learning_rates.append(lr)
        log.seconds.append(time.perf_counter() - started)
        logger.info(
            "detector epoch %d/%d lr=%.2e loss=%.4f",
            epoch + 1,
            train.epochs,
            lr,
            log.train_loss[-1],
        )
    return model, log


# ============================================================
# Checkpoints
# ============================================================


CHECKPOINT_KIND = "detector"


def save_detector(path: Path, model: DetectorModel) -> Path:
    return save_checkpoint(
        path, CHECKPOINT_KIND, dataclasses.asdict(model.config), model.params.state_arrays()
    )


def load_detector(path: Path) -> DetectorModel:
    config, tensors = load_checkpoint(path, CHECKPOINT_KIND)
    model = init_detector(DetectorConfig(**config))
    model.params.load_state_arrays(tensors)
    return model
