"""Abnormal-object localization inside forged frames.

Per frame:

  1. `residual`: `|S_I - S_R|`. Regions where the video and the wireless
     side agree cancel to (near) zero; an erased or inserted person leaves
     a full-height heat-map peak.
  2. `nms`: per keypoint channel, pixels that are the strict maximum of
     their `window x window` neighbourhood and at least `tau` become
     candidates, refined to subpixel precision.
  3. `combine_paf`: `L_I + L_R`. A person present on either side keeps
     its limb field.
  4. `associate`: every candidate pair along a Body-14 limb is scored by
     the line integral of the combined PAF over the segment joining
     them; pairs are matched greedily per limb and matched pairs are
     unioned into skeletons.

Candidate coordinates are pixels `(x, y)` in the renderers' convention;
the poses handed back are in normalized image coordinates.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.cluster.hierarchy import DisjointSet

from securepose.config import LocalizerConfig
from securepose.pose_features import (
    LIMBS,
    NUM_KEYPOINTS,
    SkeletonPose,
    pixels_to_normalized,
)
from securepose.tensor_file import atomic_write_text

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


# ============================================================
# Types
# ============================================================


@dataclass(frozen=True)
class Candidate:
    """One suspicious keypoint: subpixel location and residual height."""

    x: float
    y: float
    score: float

    @property
    def xy(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class SuspiciousKeypoints:
    """Per-type candidate lists; `by_type[j]` holds the candidates of keypoint j."""

    by_type: tuple[tuple[Candidate, ...], ...]
    height: int
    width: int

    def __post_init__(self) -> None:
        if len(self.by_type) != NUM_KEYPOINTS:
            raise ValueError(f"expected {NUM_KEYPOINTS} candidate lists, got {len(self.by_type)}")

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.by_type)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @classmethod
    def empty(cls, height: int, width: int) -> SuspiciousKeypoints:
        return cls(by_type=((),) * NUM_KEYPOINTS, height=height, width=width)


@dataclass(frozen=True)
class LimbMatch:
    limb: int
    first: int
    second: int
    score: float


@dataclass(frozen=True, eq=False)
class AbnormalPose:
    """An associated skeleton with its limb connections and padded box."""

    pose: SkeletonPose
    connections: tuple[LimbMatch, ...]
    box: tuple[float, float, float, float]
    candidates: dict[int, int] = field(default_factory=dict)

    @property
    def num_keypoints(self) -> int:
        return int(self.pose.visible.sum())

    def connected(self, limb: int) -> bool:
        return any(m.limb == limb for m in self.connections)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "keypoints": [
                list(map(float, xy)) if v else None
                for xy, v in zip(self.pose.keypoints, self.pose.visible, strict=True)
            ],
            "connections": [
                {"limb": m.limb, "from": LIMBS[m.limb][0], "to": LIMBS[m.limb][1], "score": m.score}
                for m in self.connections
            ],
            "box": list(self.box),
        }


# ============================================================
# Residuals and peaks
# ============================================================


def residual(s_i: NDArray[np.floating], s_r: NDArray[np.floating]) -> NDArray[np.float32]:
    s_i = np.asarray(s_i)
    s_r = np.asarray(s_r)
    if s_i.shape != s_r.shape:
        raise ValueError(f"JHM shapes differ: {s_i.shape} vs {s_r.shape}")
    return np.abs(s_i.astype(np.float32) - s_r.astype(np.float32))


def _subpixel_offset(left: float, center: float, right: float) -> float:
    """Vertex of the parabola through three samples; log domain when all are positive."""
    if left > 0 and center > 0 and right > 0:
        left, center, right = np.log(left), np.log(center), np.log(right)
    denom = left - 2.0 * center + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _refine(plane: NDArray[np.floating], row: int, col: int) -> tuple[float, float]:
    h, w = plane.shape
    c = float(plane[row, col])
    dx = dy = 0.0
    if 0 < col < w - 1:
        dx = _subpixel_offset(float(plane[row, col - 1]), c, float(plane[row, col + 1]))
    if 0 < row < h - 1:
        dy = _subpixel_offset(float(plane[row - 1, col]), c, float(plane[row + 1, col]))
    return col + dx, row + dy


def nms(d: NDArray[np.floating], window: int = 5, tau: float = 0.1) -> SuspiciousKeypoints:
    """Strict local maxima of each channel of an `(H, W, J)` residual map."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 3 or d.shape[-1] != NUM_KEYPOINTS:
        raise ValueError(f"expected an (H, W, {NUM_KEYPOINTS}) residual map, got {d.shape}")
    h, w, _ = d.shape
    footprint = np.ones((window, window), dtype=bool)
    footprint[window // 2, window // 2] = False
    by_type: list[tuple[Candidate, ...]] = []
    for j in range(NUM_KEYPOINTS):
        plane = d[:, :, j]
        if plane.max() < tau:
            by_type.append(())
            continue
        neighbours = ndimage.maximum_filter(
            plane, footprint=footprint, mode="constant", cval=-np.inf
        )
        rows, cols = np.nonzero((plane > neighbours) & (plane >= tau))
        found = []
        for r, c in zip(rows.tolist(), cols.tolist(), strict=True):
            x, y = _refine(plane, r, c)
            found.append(Candidate(x=x, y=y, score=float(plane[r, c])))
        by_type.append(tuple(found))
    return SuspiciousKeypoints(by_type=tuple(by_type), height=h, width=w)


# ============================================================
# Association
# ============================================================


def combine_paf(l_i: NDArray[np.floating], l_r: NDArray[np.floating]) -> NDArray[np.float32]:
    l_i = np.asarray(l_i)
    l_r = np.asarray(l_r)
    if l_i.shape != l_r.shape:
        raise ValueError(f"PAF shapes differ: {l_i.shape} vs {l_r.shape}")
    return (l_i.astype(np.float32) + l_r.astype(np.float32)).astype(np.float32)


def limb_score(
    field_xy: NDArray[np.floating],
    p1: NDArray[np.floating],
    p2: NDArray[np.floating],
    samples: int = 10,
) -> tuple[float, float]:
    """Mean PAF alignment along `p1 -> p2` and the fraction of positive samples.

    `field_xy` is one limb's `(H, W, 2)` field; points are pixel `(x, y)`.
    A zero-length segment scores `(0, 0)`.
    """
    seg = np.asarray(p2, dtype=np.float64) - np.asarray(p1, dtype=np.float64)
    length = float(np.hypot(seg[0], seg[1]))
    if length < 1e-9:
        return 0.0, 0.0
    unit = seg / length
    u = np.linspace(0.0, 1.0, samples)
    pts = np.asarray(p1, dtype=np.float64)[None, :] + u[:, None] * seg[None, :]
    coords = np.stack([pts[:, 1], pts[:, 0]])
    fx = ndimage.map_coordinates(field_xy[:, :, 0], coords, order=1, mode="nearest")
    fy = ndimage.map_coordinates(field_xy[:, :, 1], coords, order=1, mode="nearest")
    dots = fx * unit[0] + fy * unit[1]
    return float(dots.mean()), float(np.mean(dots > 0))


def limb_score_matrix(
    keypoints: SuspiciousKeypoints,
    paf: NDArray[np.floating],
    limb: int,
    config: LocalizerConfig,
) -> NDArray[np.float64]:
    """Scores of every admissible pair for one limb; inadmissible pairs are -inf."""
    a, b = LIMBS[limb]
    first, second = keypoints.by_type[a], keypoints.by_type[b]
    out = np.full((len(first), len(second)), -np.inf)
    field_xy = np.asarray(paf[:, :, :, limb], dtype=np.float64)
    for i, k1 in enumerate(first):
        for j, k2 in enumerate(second):
            score, positive = limb_score(field_xy, k1.xy, k2.xy, config.samples)
            if positive >= config.positive_fraction and score >= config.s_min:
                out[i, j] = score
    return out


def greedy_limb_matching(scores: NDArray[np.floating]) -> list[tuple[int, int, float]]:
    """Pick pairs by descending score, each row and column at most once.

    Non-finite entries are never picked. Equal scores go to the smaller
    `(row, col)` first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rows, cols = np.nonzero(np.isfinite(scores))
    order = sorted(zip(rows.tolist(), cols.tolist(), strict=True), key=lambda rc: -scores[rc])
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    picked = []
    for r, c in order:
        if r in used_rows or c in used_cols:
            continue
        used_rows.add(r)
        used_cols.add(c)
        picked.append((r, c, float(scores[r, c])))
    return picked


def _box(points: NDArray[np.float64], padding: float) -> tuple[float, float, float, float]:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    margin = padding * (hi - lo)
    x0, y0 = np.clip(lo - margin, 0.0, 1.0)
    x1, y1 = np.clip(hi + margin, 0.0, 1.0)
    return float(x0), float(y0), float(x1), float(y1)


def associate(
    keypoints: SuspiciousKeypoints,
    paf: NDArray[np.floating],
    config: LocalizerConfig | None = None,
) -> list[AbnormalPose]:
    """Group candidates into skeletons along greedily matched limbs."""
    config = config or LocalizerConfig()
    paf = np.asarray(paf)
    expected = (keypoints.height, keypoints.width, 2, len(LIMBS))
    if paf.shape != expected:
        raise ValueError(f"PAF shape {paf.shape} does not match {expected}")
    if keypoints.total == 0:
        return []
    nodes = DisjointSet(
        [(j, n) for j, cands in enumerate(keypoints.by_type) for n in range(len(cands))]
    )
    matches: list[LimbMatch] = []
    for limb, (a, b) in enumerate(LIMBS):
        if not keypoints.by_type[a] or not keypoints.by_type[b]:
            continue
        for r, c, score in greedy_limb_matching(limb_score_matrix(keypoints, paf, limb, config)):
            nodes.merge((a, r), (b, c))
            matches.append(LimbMatch(limb=limb, first=r, second=c, score=score))

    poses: list[AbnormalPose] = []
    for subset in sorted(nodes.subsets(), key=lambda s: sorted(s)):
        if len(subset) < config.min_keypoints:
            continue
        members = dict(sorted(subset))
        px = np.zeros((NUM_KEYPOINTS, 2), dtype=np.float64)
        visible = np.zeros(NUM_KEYPOINTS, dtype=bool)
        for j, n in members.items():
            px[j] = keypoints.by_type[j][n].xy
            visible[j] = True
        normalized = pixels_to_normalized(px, keypoints.height, keypoints.width)
        normalized[~visible] = 0.0
        first_of = {m.limb: members.get(LIMBS[m.limb][0]) for m in matches}
        connections = tuple(m for m in matches if first_of[m.limb] == m.first)
        pose = SkeletonPose(person_id=len(poses), keypoints=normalized, visible=visible)
        poses.append(
            AbnormalPose(
                pose=pose,
                connections=connections,
                box=_box(normalized[visible], config.box_padding),
                candidates=members,
            )
        )
    return poses


# ============================================================
# Frames and GOPs
# ============================================================


def localize_frame(
    s_i: NDArray[np.floating],
    s_r: NDArray[np.floating],
    l_i: NDArray[np.floating],
    l_r: NDArray[np.floating],
    config: LocalizerConfig | None = None,
) -> list[AbnormalPose]:
    config = config or LocalizerConfig()
    candidates = nms(residual(s_i, s_r), config.window, config.tau)
    return associate(candidates, combine_paf(l_i, l_r), config)


@dataclass(frozen=True)
class GopLocalization:
    gop_id: str
    frames: tuple[tuple[AbnormalPose, ...], ...]

    @property
    def num_abnormal(self) -> int:
        return sum(len(f) for f in self.frames)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "gopId": self.gop_id,
            "frames": [[p.to_json_dict() for p in frame] for frame in self.frames],
        }


def localize_gop(
    gop_id: str,
    jhm_visual: NDArray[np.floating],
    jhm_wireless: NDArray[np.floating],
    paf_visual: NDArray[np.floating],
    paf_wireless: NDArray[np.floating],
    config: LocalizerConfig | None = None,
) -> GopLocalization:
    """Localize abnormal persons in every frame of a `(M, ...)` GOP."""
    if not (len(jhm_visual) == len(jhm_wireless) == len(paf_visual) == len(paf_wireless)):
        raise ValueError("JHM and PAF sequences must have the same number of frames")
    frames = tuple(
        tuple(localize_frame(si, sr, li, lr, config))
        for si, sr, li, lr in zip(jhm_visual, jhm_wireless, paf_visual, paf_wireless, strict=True)
    )
    logger.debug(
        "%s: %d abnormal skeletons over %d frames", gop_id, sum(map(len, frames)), len(frames)
    )
    return GopLocalization(gop_id=gop_id, frames=frames)


def write_localization_report(path: Path, results: Sequence[GopLocalization]) -> Path:
    body = {"version": REPORT_VERSION, "gops": [r.to_json_dict() for r in results]}
    return atomic_write_text(Path(path), json.dumps(body, indent=2) + "\n")


def abnormal_poses(frame: Sequence[AbnormalPose]) -> list[SkeletonPose]:
    return [a.pose for a in frame]
