"""Body-14 pose representations and the cross-modal training losses.

Two dense encodings of a set of skeletons drive everything downstream:

  - JHM (joint heat map), `(H, W, J)`: channel j holds a Gaussian bump at
    every visible keypoint of type j. Multiple people merge by `max`.
  - PAF (part affinity field), `(H, W, 2, C)`: for limb c, pixels within
    `limb_width` of the limb segment carry the unit vector pointing from
    the limb's first joint to its second. Overlapping people average.

Both accept an optional leading frame axis in the loss functions; the
renderers produce one frame at a time.

Pixel convention: a keypoint at normalized image coordinates `(x, y)` sits
at pixel position `(x * W - 0.5, y * H - 0.5)`, so a keypoint at a pixel
center lands exactly on that pixel's integer index.

The losses weight each element by an affine function of the ground-truth
magnitude, which keeps the sparse non-zero part of the visual features
from being drowned by the mostly-empty background:

    alpha_j(h, w) = lambda1 * |s_I^j(h, w)|   + beta1
    alpha_c(h, w) = lambda2 * ||l_I^c(h, w)|| + beta2

Weights are computed from the visual (ground-truth) side only.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import NDArray

from securepose.numcore import Tensor, as_tensor, mul, square, sub, sum_all

# ============================================================
# Body-14 topology
# ============================================================

KEYPOINT_NAMES: tuple[str, ...] = (
    "nose",
    "neck",
    "r_shoulder",
    "l_shoulder",
    "r_elbow",
    "l_elbow",
    "r_wrist",
    "l_wrist",
    "r_hip",
    "l_hip",
    "r_knee",
    "l_knee",
    "r_ankle",
    "l_ankle",
)

# Ordered (from, to) joint pairs. The PAF vector of a limb points from -> to.
LIMBS: tuple[tuple[int, int], ...] = (
    (1, 0),  # neck -> nose
    (1, 2),  # neck -> r_shoulder
    (2, 4),  # r_shoulder -> r_elbow
    (4, 6),  # r_elbow -> r_wrist
    (1, 3),  # neck -> l_shoulder
    (3, 5),  # l_shoulder -> l_elbow
    (5, 7),  # l_elbow -> l_wrist
    (1, 8),  # neck -> r_hip
    (8, 10),  # r_hip -> r_knee
    (10, 12),  # r_knee -> r_ankle
    (1, 9),  # neck -> l_hip
    (9, 11),  # l_hip -> l_knee
    (11, 13),  # l_knee -> l_ankle
)

NUM_KEYPOINTS = len(KEYPOINT_NAMES)
NUM_LIMBS = len(LIMBS)

DEFAULT_HEIGHT = 64
DEFAULT_WIDTH = 64
DEFAULT_SIGMA = 1.5
DEFAULT_LIMB_WIDTH = 1.5


@dataclass(frozen=True)
class Body14Topology:
    """Keypoint names and the limb tree connecting them."""

    keypoints: tuple[str, ...] = KEYPOINT_NAMES
    limbs: tuple[tuple[int, int], ...] = LIMBS

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)

    @property
    def num_limbs(self) -> int:
        return len(self.limbs)

    def is_tree(self) -> bool:
        """True when the limbs connect every keypoint with no cycle."""
        if self.num_limbs != self.num_keypoints - 1:
            return False
        parent = list(range(self.num_keypoints))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.limbs:
            if not (0 <= a < self.num_keypoints and 0 <= b < self.num_keypoints):
                return False
            ra, rb = find(a), find(b)
            if ra == rb:
                return False
            parent[ra] = rb
        return True


BODY14 = Body14Topology()


# ============================================================
# Skeletons
# ============================================================


@dataclass(frozen=True, eq=False)
class SkeletonPose:
    """One person's 14 keypoints in normalized image coordinates.

    `keypoints` is `(14, 2)` as `(x, y)` in `[0, 1]`; `visible` is `(14,)`.
    Keypoints outside the image are carried but flagged invisible.
    """

    person_id: int
    keypoints: NDArray[np.float64]
    visible: NDArray[np.bool_]

    def __post_init__(self) -> None:
        if self.keypoints.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"keypoints must be (14, 2), got {self.keypoints.shape}")
        if self.visible.shape != (NUM_KEYPOINTS,):
            raise ValueError(f"visible must be (14,), got {self.visible.shape}")

    @classmethod
    def from_points(cls, person_id: int, keypoints: NDArray[np.float64]) -> SkeletonPose:
        """Build a pose whose visibility is "inside the unit square"."""
        kp = np.asarray(keypoints, dtype=np.float64)
        inside = np.all((kp >= 0.0) & (kp <= 1.0), axis=1)
        return cls(person_id=person_id, keypoints=kp, visible=inside)

    def same_as(self, other: SkeletonPose) -> bool:
        return (
            self.person_id == other.person_id
            and np.array_equal(self.keypoints, other.keypoints)
            and np.array_equal(self.visible, other.visible)
        )

    def bbox(self) -> tuple[float, float, float, float] | None:
        """`(x0, y0, x1, y1)` hull of the visible keypoints, or None."""
        if not self.visible.any():
            return None
        pts = self.keypoints[self.visible]
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        return float(x0), float(y0), float(x1), float(y1)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "personId": self.person_id,
            "keypoints": self.keypoints.tolist(),
            "visible": self.visible.astype(bool).tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> SkeletonPose:
        return cls(
            person_id=int(data["personId"]),
            keypoints=np.asarray(data["keypoints"], dtype=np.float64).reshape(NUM_KEYPOINTS, 2),
            visible=np.asarray(data["visible"], dtype=bool).reshape(NUM_KEYPOINTS),
        )


def poses_equal(a: Sequence[SkeletonPose], b: Sequence[SkeletonPose]) -> bool:
    return len(a) == len(b) and all(x.same_as(y) for x, y in zip(a, b, strict=True))


def _to_pixels(xy: NDArray[np.float64], height: int, width: int) -> NDArray[np.float64]:
    return np.stack([xy[..., 0] * width - 0.5, xy[..., 1] * height - 0.5], axis=-1)


def pixels_to_normalized(
    px: NDArray[np.float64], height: int, width: int
) -> NDArray[np.float64]:
    """Inverse of the renderers' pixel mapping; `px` is `(..., 2)` as `(x, y)`."""
    px = np.asarray(px, dtype=np.float64)
    return np.stack([(px[..., 0] + 0.5) / width, (px[..., 1] + 0.5) / height], axis=-1)


# ============================================================
# Rendering
# ============================================================


def render_jhm(
    poses: Sequence[SkeletonPose],
    height: int = DEFAULT_HEIGHT,
    width: int = DEFAULT_WIDTH,
    sigma: float = DEFAULT_SIGMA,
) -> NDArray[np.float32]:
    """Joint heat maps `(H, W, 14)`, Gaussian per visible keypoint, max-merged."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    out = np.zeros((height, width, NUM_KEYPOINTS), dtype=np.float32)
    if not poses:
        return out
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    two_sigma_sq = 2.0 * sigma * sigma
    for pose in poses:
        px = _to_pixels(pose.keypoints, height, width)
        for j in np.flatnonzero(pose.visible):
            d2 = (xs - px[j, 0]) ** 2 + (ys - px[j, 1]) ** 2
            np.maximum(out[:, :, j], np.exp(-d2 / two_sigma_sq), out=out[:, :, j])
    return out


def render_paf(
    poses: Sequence[SkeletonPose],
    height: int = DEFAULT_HEIGHT,
    width: int = DEFAULT_WIDTH,
    limb_width: float = DEFAULT_LIMB_WIDTH,
) -> NDArray[np.float32]:
    """Part affinity fields `(H, W, 2, 13)`; overlapping limbs average."""
    if limb_width <= 0:
        raise ValueError(f"limb_width must be > 0, got {limb_width}")
    out = np.zeros((height, width, 2, NUM_LIMBS), dtype=np.float32)
    if not poses:
        return out
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for c, (a, b) in enumerate(LIMBS):
        acc = np.zeros((height, width, 2), dtype=np.float64)
        count = np.zeros((height, width), dtype=np.int32)
        for pose in poses:
            if not (pose.visible[a] and pose.visible[b]):
                continue
            px = _to_pixels(pose.keypoints, height, width)
            seg = px[b] - px[a]
            length = float(np.hypot(seg[0], seg[1]))
            if length < 1e-9:
                continue
            unit = seg / length
            rx, ry = xs - px[a, 0], ys - px[a, 1]
            along = np.clip(rx * unit[0] + ry * unit[1], 0.0, length)
            dx = rx - along * unit[0]
            dy = ry - along * unit[1]
            support = dx * dx + dy * dy <= limb_width * limb_width
            acc[support] += unit
            count[support] += 1
        covered = count > 0
        acc[covered] /= count[covered][:, None]
        out[:, :, :, c] = acc
    return out


# ============================================================
# Losses
# ============================================================


@dataclass(frozen=True)
class LossWeights:
    """Affine element-weight coefficients for the JHM and PAF losses."""

    lambda1: float = 1.0
    beta1: float = 1.0
    lambda2: float = 0.3
    beta2: float = 0.7

    def __post_init__(self) -> None:
        for name in ("lambda1", "beta1", "lambda2", "beta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def jhm_weight_map(s_gt: NDArray[np.floating], w: LossWeights) -> NDArray[np.floating]:
    return w.lambda1 * np.abs(s_gt) + w.beta1


def paf_weight_map(l_gt: NDArray[np.floating], w: LossWeights) -> NDArray[np.floating]:
    """Per-limb weights with a kept size-1 vector axis for broadcasting."""
    return w.lambda2 * np.linalg.norm(l_gt, axis=-2, keepdims=True) + w.beta2


def _check_shapes(a: tuple[int, ...], b: tuple[int, ...], what: str) -> None:
    if a != b:
        raise ValueError(f"{what}: visual shape {a} != wireless shape {b}")


def jhm_loss(
    s_i: NDArray[np.floating],
    s_r: Tensor | NDArray[np.floating],
    w: LossWeights = LossWeights(),
) -> Tensor:
    """Weighted squared JHM discrepancy, summed over every element."""
    pred = as_tensor(s_r)
    _check_shapes(tuple(np.shape(s_i)), pred.shape, "jhm_loss")
    target = np.asarray(s_i, dtype=pred.data.dtype)
    alpha = jhm_weight_map(target, w).astype(pred.data.dtype)
    return sum_all(mul(square(sub(pred, target)), alpha))


def paf_loss(
    l_i: NDArray[np.floating],
    l_r: Tensor | NDArray[np.floating],
    w: LossWeights = LossWeights(),
) -> Tensor:
    """Weighted squared PAF vector discrepancy, summed over every element."""
    pred = as_tensor(l_r)
    _check_shapes(tuple(np.shape(l_i)), pred.shape, "paf_loss")
    target = np.asarray(l_i, dtype=pred.data.dtype)
    alpha = paf_weight_map(target, w).astype(pred.data.dtype)
    return sum_all(mul(square(sub(pred, target)), alpha))


@dataclass(frozen=True)
class CrossModalPair:
    """Visual targets and wireless predictions for one sequence of frames."""

    s_i: NDArray[np.floating]
    s_r: Tensor | NDArray[np.floating]
    l_i: NDArray[np.floating]
    l_r: Tensor | NDArray[np.floating]


def total_cross_modal_loss(
    pairs: Sequence[CrossModalPair], w: LossWeights = LossWeights()
) -> Tensor:
    """Mean over sequences of the summed per-frame JHM + PAF losses."""
    if not pairs:
        raise ValueError("total_cross_modal_loss needs at least one sequence")
    total: Tensor | None = None
    for pair in pairs:
        term = jhm_loss(pair.s_i, pair.s_r, w) + paf_loss(pair.l_i, pair.l_r, w)
        total = term if total is None else total + term
    assert total is not None
    return mul(total, 1.0 / len(pairs))
